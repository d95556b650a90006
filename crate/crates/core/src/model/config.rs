use serde::{Deserialize, Serialize};

use crate::error::{G5Error, Result};

/// Residual term injected into every transformer layer besides the usual
/// skip connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Residual {
    /// Learned projection of the layer stack's input matrix.
    GraphRaw,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of embeddings and hidden states.
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    /// Layers in the shared core.
    pub core_depth: usize,
    /// Layers in each graph's input component.
    pub input_depth: usize,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
    pub layer_norm_eps: f64,
    /// Exclude zero-padded context rows from attention.
    pub mask_padding: bool,
    /// Linear layers in each classification head.
    pub classifier_depth: usize,
    pub residual: Residual,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            heads: 2,
            intermediate: 32,
            core_depth: 2,
            input_depth: 2,
            hidden_dropout: 0.5,
            attention_dropout: 0.3,
            layer_norm_eps: 1e-12,
            mask_padding: false,
            classifier_depth: 1,
            residual: Residual::GraphRaw,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(G5Error::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.intermediate == 0 {
            return bad("hidden, heads and intermediate must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.hidden % 2 != 0 {
            return bad(format!("hidden size {} must be even for positional encodings", self.hidden));
        }
        for (name, p) in [
            ("hidden_dropout", self.hidden_dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        if self.classifier_depth == 0 {
            return bad("classifier_depth must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Scalars in one transformer layer.
    pub fn layer_param_count(&self) -> usize {
        let (d, f) = (self.hidden, self.intermediate);
        let res = match self.residual {
            Residual::GraphRaw => d * d,
            Residual::None => 0,
        };
        4 * d * d + res + 2 * d * f + 6 * d + f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_hidden() {
        let cfg = ModelConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(G5Error::Config(_))));
        assert!(ModelConfig::default().validate().is_ok());
    }
}
