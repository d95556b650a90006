//! Classifying a graph with no labels at all, by reasoning from classifiers
//! trained on other graphs.
//!
//! Two strategies are provided: consistency matching, which trains the target
//! head so that learned projections of its output agree with every source
//! head, and dynamic routing, which trains it toward a capsule-routed
//! consensus of the source label vectors. Neither touches the pretrained
//! model parameters.

mod bank;
mod labels;
mod reason;
mod routing;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use bank::{cross_source_labels, SourceLabels};
pub use labels::{assign_labels, entropy, ReasonedLabels, REASONED_HEADER};
pub use reason::{cccm_fit, cdr_fit, ReasonSettings};
pub use routing::{cdr_route, squash, RoutingState, DEFAULT_ROUTING_ITERATIONS};

use crate::error::{G5Error, Result};
use crate::io::{Checkpoint, MetricRecord, SchedulePosition};
use crate::model::{representations, ModelState};
use crate::tensor::Tensor;
use crate::training::{
    hybrid_pretrain, pretrain_sources, transfer_init, GraphInput, GraphPlan, GraphSettings, RunSettings, Task,
    TaskSchedule, Trainer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cccm,
    Cdr,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cccm => "cccm",
            Strategy::Cdr => "cdr",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "cccm" => Ok(Strategy::Cccm),
            "cdr" => Ok(Strategy::Cdr),
            _ => Err(G5Error::Config(format!("unknown strategy '{s}' (expected cccm or cdr)"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run `strategy` over target representations and a source label bank.
pub fn reason(strategy: Strategy, z: &Tensor, bank: &[SourceLabels], classes: usize, settings: &ReasonSettings, seed: u64) -> Result<ReasonedLabels> {
    match strategy {
        Strategy::Cccm => cccm_fit(z, bank, classes, settings, seed),
        Strategy::Cdr => cdr_fit(z, bank, classes, settings, seed),
    }
}

/// Fine-tune the target on unsupervised tasks only and return its eval-mode
/// representations. Target labels are sealed for the duration.
pub fn prepare_target(
    state: &mut ModelState,
    trainer: &mut Trainer,
    target: GraphInput,
    plan: &GraphPlan,
    rounds: usize,
) -> Result<Tensor> {
    if plan.has_supervised() {
        return Err(G5Error::Contract(format!(
            "zero-label mode cannot schedule supervised tasks on target '{}'",
            target.id()
        )));
    }
    if target.labelled.is_some() {
        return Err(G5Error::Contract("zero-label target was given labelled nodes".into()));
    }
    target.dataset.seal_labels();
    let schedule = TaskSchedule {
        plans: vec![plan.clone()],
        rounds,
        early_stop: None,
    };
    hybrid_pretrain(state, trainer, &[target], &schedule, None)?;
    representations(state, target.dataset, target.batch, trainer.chunk)
}

/// Result of a zero-label run.
pub struct ApocalypseOutcome {
    pub state: ModelState,
    pub reasoned: ReasonedLabels,
    pub accuracy: f64,
    /// `1 / classes` of the target.
    pub random_baseline: f64,
    pub class_entropy: f64,
    pub metrics: Vec<MetricRecord>,
    pub trained_tasks: BTreeMap<String, Vec<String>>,
}

/// Pretrain on labelled sources, then reason about the target's labels
/// without ever reading them; they are consulted once, to score the result.
#[allow(clippy::too_many_arguments)]
pub fn run_apocalypse(
    sources: &[GraphInput],
    source_settings: &[GraphSettings],
    target: GraphInput,
    target_settings: &GraphSettings,
    strategy: Strategy,
    reason_settings: &ReasonSettings,
    rs: &RunSettings,
) -> Result<ApocalypseOutcome> {
    target.dataset.seal_labels();
    let mut trainer = rs.trainer();
    let pre = pretrain_sources(sources, source_settings, rs, &mut trainer)?;
    let ck = Checkpoint::from_state(&pre, SchedulePosition::default(), trainer.trained_tasks().clone());
    reason_from_checkpoint(&ck, sources.iter().map(|s| s.id().to_string()).collect(), target, target_settings, strategy, reason_settings, rs, trainer)
}

/// The reasoning half of a zero-label run, starting from pretrained sources.
#[allow(clippy::too_many_arguments)]
pub fn reason_from_checkpoint(
    checkpoint: &Checkpoint,
    sources: Vec<String>,
    target: GraphInput,
    target_settings: &GraphSettings,
    strategy: Strategy,
    reason_settings: &ReasonSettings,
    rs: &RunSettings,
    mut trainer: Trainer,
) -> Result<ApocalypseOutcome> {
    target.dataset.seal_labels();
    reason_settings.validate()?;
    if sources.iter().any(|s| s == target.id()) {
        return Err(G5Error::Contract(format!("target '{}' cannot also be a source", target.id())));
    }
    for s in &sources {
        let trained = checkpoint.meta.trained_tasks.get(s);
        if !trained.is_some_and(|t| t.iter().any(|x| x == Task::Classify.as_str())) {
            return Err(G5Error::Contract(format!(
                "source '{s}' has no trained classifier in the checkpoint"
            )));
        }
    }
    let mut state = transfer_init(checkpoint, target.dataset, target_settings, rs.universal_k)?;
    let plan = target_settings.plan(target.id(), &[Task::Reconstruct, Task::Structure], rs.rounds);
    let z = prepare_target(&mut state, &mut trainer, target, &plan, rs.rounds)?;
    let bank = cross_source_labels(&state, &z, &sources)?;
    let classes = target.dataset.num_classes();
    let reasoned = reason(strategy, &z, &bank, classes, reason_settings, rs.seed)?;

    let id = target.id().to_string();
    let task = format!("reason-{strategy}");
    for (e, &l) in reasoned.loss_trace.iter().enumerate() {
        trainer.record(&id, &task, e + 1, "train", "loss", l);
    }
    let accuracy = reasoned.accuracy(target.dataset.labels_for_evaluation())?;
    let random_baseline = 1.0 / classes as f64;
    let class_entropy = reasoned.class_entropy();
    trainer.record(&id, &task, 0, "all", "accuracy", accuracy);
    trainer.record(&id, &task, 0, "all", "random_baseline", random_baseline);
    trainer.record(&id, &task, 0, "all", "class_entropy", class_entropy);
    Ok(ApocalypseOutcome {
        state,
        reasoned,
        accuracy,
        random_baseline,
        class_entropy,
        trained_tasks: trainer.trained_tasks().clone(),
        metrics: trainer.metrics,
    })
}
