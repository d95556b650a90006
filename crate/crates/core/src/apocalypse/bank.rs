use crate::error::{contract_err, shape_err, Result};
use crate::model::{predict_proba, ModelState};
use crate::tensor::Tensor;

/// Label distributions the frozen source heads assign to target representations.
#[derive(Clone, Debug)]
pub struct SourceLabels {
    pub source: String,
    /// `[nodes, source classes]`.
    pub probs: Tensor,
}

/// Run every source head over `z`. The state is only read.
pub fn cross_source_labels(state: &ModelState, z: &Tensor, sources: &[String]) -> Result<Vec<SourceLabels>> {
    if sources.is_empty() {
        return contract_err("reasoning needs at least one source graph");
    }
    let (_, d) = z.dims2()?;
    if d != state.config.hidden {
        return shape_err(format!(
            "representations have width {d}, model hidden size is {}",
            state.config.hidden
        ));
    }
    sources
        .iter()
        .map(|s| {
            Ok(SourceLabels {
                source: s.clone(),
                probs: predict_proba(state, s, z)?,
            })
        })
        .collect()
}
