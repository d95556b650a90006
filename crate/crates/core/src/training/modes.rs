use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::task::{evaluate_accuracy, GraphInput, Trainer};
use super::{GraphPlan, Task, TaskSchedule};
use crate::error::{G5Error, Result};
use crate::graph::{sample_training_ratio, GraphDataset, SplitName};
use crate::io::{save_checkpoint, Checkpoint, MetricRecord, SchedulePosition};
use crate::model::{GraphSlot, ModelConfig, ModelState};
use crate::tensor::AdamConfig;

/// Per-graph hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSettings {
    /// Context size sampled for the graph.
    pub k: usize,
    pub lr: f64,
    /// Epochs summed over rounds, per task.
    pub epochs: usize,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_weight_decay() -> f64 {
    5e-4
}

impl GraphSettings {
    /// Defaults for the three citation benchmarks, or `None` for other graphs.
    pub fn benchmark(graph: &str) -> Option<Self> {
        let (k, lr, epochs) = match graph {
            "cora" => (7, 0.01, 150),
            "citeseer" => (5, 0.001, 2000),
            "pubmed" => (30, 0.001, 500),
            _ => return None,
        };
        Some(GraphSettings {
            k,
            lr,
            epochs,
            weight_decay: default_weight_decay(),
        })
    }

    pub fn plan(&self, graph: &str, tasks: &[Task], rounds: usize) -> GraphPlan {
        GraphPlan::even(graph, tasks, self.epochs, rounds, self.lr, self.weight_decay)
    }

    pub fn slot(&self, dataset: &GraphDataset) -> GraphSlot {
        GraphSlot {
            k: self.k,
            feature_dim: dataset.feature_dim(),
            num_classes: dataset.num_classes(),
        }
    }
}

/// Settings shared by every graph of a run.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub run_id: String,
    pub model: ModelConfig,
    pub rounds: usize,
    pub early_stop: Option<f64>,
    pub tasks: Vec<Task>,
    pub seed: u64,
    /// Portal size for multi-graph runs; isolated runs use the graph's own k.
    pub universal_k: usize,
    pub chunk: usize,
    /// Write `round<N>.g5ck` here after every pretraining round.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            run_id: "run".into(),
            model: ModelConfig::default(),
            rounds: 3,
            early_stop: None,
            tasks: Task::ALL.to_vec(),
            seed: 0,
            universal_k: 15,
            chunk: 256,
            checkpoint_dir: None,
        }
    }
}

impl RunSettings {
    pub fn trainer(&self) -> Trainer {
        let mut t = Trainer::new(self.run_id.clone(), self.seed);
        t.chunk = self.chunk;
        t
    }

    pub fn schedule(&self, graphs: &[(&str, &GraphSettings)]) -> TaskSchedule {
        TaskSchedule {
            plans: graphs
                .iter()
                .map(|(id, gs)| gs.plan(id, &self.tasks, self.rounds))
                .collect(),
            rounds: self.rounds,
            early_stop: self.early_stop,
        }
    }
}

/// Result of a training run.
pub struct RunOutcome {
    pub state: ModelState,
    pub metrics: Vec<MetricRecord>,
    /// Test accuracy per evaluated graph.
    pub accuracy: BTreeMap<String, f64>,
    pub trained_tasks: BTreeMap<String, Vec<String>>,
}

impl RunOutcome {
    pub fn checkpoint(&self, position: SchedulePosition) -> Checkpoint {
        Checkpoint::from_state(&self.state, position, self.trained_tasks.clone())
    }
}

pub struct PretrainReport {
    pub rounds_run: usize,
    pub final_loss: BTreeMap<(String, Task), f64>,
}

fn find<'a>(inputs: &'a [GraphInput<'a>], id: &str) -> Result<&'a GraphInput<'a>> {
    inputs
        .iter()
        .find(|i| i.id() == id)
        .ok_or_else(|| G5Error::Contract(format!("schedule names graph '{id}' but it was not provided")))
}

/// Rotate through graphs and their task segments for the scheduled rounds.
pub fn hybrid_pretrain(
    state: &mut ModelState,
    trainer: &mut Trainer,
    inputs: &[GraphInput],
    schedule: &TaskSchedule,
    checkpoint_dir: Option<&std::path::Path>,
) -> Result<PretrainReport> {
    schedule.validate()?;
    let mut last: BTreeMap<(String, Task), f64> = BTreeMap::new();
    let mut rounds_run = 0;
    for round in 0..schedule.rounds {
        let mut current = BTreeMap::new();
        for plan in &schedule.plans {
            let input = find(inputs, &plan.graph)?;
            let opt = AdamConfig::with_lr(plan.lr, plan.weight_decay);
            for seg in &plan.segments {
                let trace = trainer.train_task(state, input, seg.task, seg.epochs, &opt)?;
                log::info!(
                    "round {round} {} {}: loss {:.5} -> {:.5}",
                    plan.graph,
                    seg.task,
                    trace.first().copied().unwrap_or(f64::NAN),
                    trace.last().copied().unwrap_or(f64::NAN)
                );
                if let Some(&l) = trace.last() {
                    current.insert((plan.graph.clone(), seg.task), l);
                }
            }
        }
        rounds_run = round + 1;
        if let Some(dir) = checkpoint_dir {
            let ck = Checkpoint::from_state(
                state,
                SchedulePosition {
                    round: rounds_run,
                    graph: None,
                    task: None,
                },
                trainer.trained_tasks().clone(),
            );
            save_checkpoint(&ck, &dir.join(format!("round{rounds_run}.g5ck")))?;
        }
        let settled = schedule.early_stop.is_some_and(|tol| {
            !last.is_empty()
                && current.iter().all(|(k, &l)| {
                    last.get(k)
                        .is_some_and(|&p: &f64| (l - p).abs() <= tol * p.abs().max(f64::MIN_POSITIVE))
                })
        });
        last = current;
        if settled {
            log::info!("loss shift below threshold after round {rounds_run}; stopping");
            break;
        }
    }
    Ok(PretrainReport {
        rounds_run,
        final_loss: last,
    })
}

/// Start from a pretrained checkpoint and give `target` a freshly initialised
/// input component and heads. The core and any source heads are taken as saved.
pub fn transfer_init(checkpoint: &Checkpoint, target: &GraphDataset, settings: &GraphSettings, universal_k: usize) -> Result<ModelState> {
    if checkpoint.meta.universal_k != universal_k {
        return Err(G5Error::Config(format!(
            "checkpoint core accepts k={}, run is configured for k={universal_k}",
            checkpoint.meta.universal_k
        )));
    }
    let mut state = checkpoint.to_state()?;
    let id = target.id();
    if state.graphs().contains_key(id) {
        let slot = settings.slot(target);
        if state.graph(id)? != &slot {
            return Err(G5Error::Config(format!(
                "checkpoint has graph '{id}' with different sizes than the target"
            )));
        }
        state.reinit_graph(id, &format!("transfer/{id}"))?;
    } else {
        state.add_graph(id, settings.slot(target))?;
        state.reinit_graph(id, &format!("transfer/{id}"))?;
    }
    Ok(state)
}

/// Train the target graph's plan for `rounds` rounds. Supervised segments see
/// only a `ratio` sample of the training split; unsupervised segments use
/// the whole graph.
pub fn fine_tune(
    state: &mut ModelState,
    trainer: &mut Trainer,
    input: GraphInput,
    plan: &GraphPlan,
    rounds: usize,
    ratio: f64,
    seed: u64,
) -> Result<()> {
    let sampled;
    let mut input = input;
    if plan.has_supervised() {
        sampled = sample_training_ratio(input.dataset, ratio, seed)?;
        if sampled.is_empty() {
            return Err(G5Error::Contract(format!(
                "ratio {ratio} leaves no labelled nodes on graph '{}'",
                input.id()
            )));
        }
        input.labelled = Some(&sampled);
    }
    let schedule = TaskSchedule {
        plans: vec![plan.clone()],
        rounds,
        early_stop: None,
    };
    hybrid_pretrain(state, trainer, &[input], &schedule, None)?;
    Ok(())
}

fn evaluate_into(
    state: &ModelState,
    trainer: &mut Trainer,
    input: &GraphInput,
    accuracy: &mut BTreeMap<String, f64>,
    chunk: usize,
) -> Result<()> {
    let ds = input.dataset;
    for split in [SplitName::Val, SplitName::Test] {
        if ds.split(split).is_empty() {
            continue;
        }
        let acc = evaluate_accuracy(state, input, split, chunk)?;
        trainer.record(ds.id(), "classify", 0, split.as_str(), "accuracy", acc);
        if split == SplitName::Test {
            accuracy.insert(ds.id().to_string(), acc);
        }
    }
    Ok(())
}

fn finish(state: ModelState, trainer: Trainer, accuracy: BTreeMap<String, f64>) -> RunOutcome {
    RunOutcome {
        state,
        trained_tasks: trainer.trained_tasks().clone(),
        metrics: trainer.metrics,
        accuracy,
    }
}

/// One graph, hybrid schedule, core portal equal to the graph's own k.
pub fn run_isolated(input: GraphInput, gs: &GraphSettings, rs: &RunSettings) -> Result<RunOutcome> {
    let mut state = ModelState::new(rs.model.clone(), gs.k, rs.seed)?;
    state.add_graph(input.id(), gs.slot(input.dataset))?;
    let mut trainer = rs.trainer();
    let schedule = rs.schedule(&[(input.id(), gs)]);
    hybrid_pretrain(&mut state, &mut trainer, &[input], &schedule, rs.checkpoint_dir.as_deref())?;
    let mut acc = BTreeMap::new();
    evaluate_into(&state, &mut trainer, &input, &mut acc, rs.chunk)?;
    Ok(finish(state, trainer, acc))
}

/// Hybrid pretraining over several graphs through one shared core, then a
/// classification fine-tune of the whole stack on each graph.
pub fn run_mixed(inputs: &[GraphInput], settings: &[GraphSettings], rs: &RunSettings) -> Result<RunOutcome> {
    if inputs.len() != settings.len() {
        return Err(G5Error::Contract("one settings entry per graph required".into()));
    }
    let mut state = ModelState::new(rs.model.clone(), rs.universal_k, rs.seed)?;
    for (i, gs) in inputs.iter().zip(settings) {
        state.add_graph(i.id(), gs.slot(i.dataset))?;
    }
    let mut trainer = rs.trainer();
    let pairs: Vec<(&str, &GraphSettings)> = inputs.iter().map(|i| i.id()).zip(settings).collect();
    hybrid_pretrain(&mut state, &mut trainer, inputs, &rs.schedule(&pairs), rs.checkpoint_dir.as_deref())?;
    let mut acc = BTreeMap::new();
    for (input, gs) in inputs.iter().zip(settings) {
        let plan = gs.plan(input.id(), &[Task::Classify], rs.rounds);
        let opt = AdamConfig::with_lr(plan.lr, plan.weight_decay);
        trainer.train_task(&mut state, input, Task::Classify, plan.segments[0].epochs, &opt)?;
        evaluate_into(&state, &mut trainer, input, &mut acc, rs.chunk)?;
    }
    Ok(finish(state, trainer, acc))
}

/// Pretrain on the sources, hybrid schedule; returns the pretrained state.
pub fn pretrain_sources(
    sources: &[GraphInput],
    settings: &[GraphSettings],
    rs: &RunSettings,
    trainer: &mut Trainer,
) -> Result<ModelState> {
    if sources.is_empty() || sources.len() != settings.len() {
        return Err(G5Error::Contract("one settings entry per source graph required".into()));
    }
    let mut state = ModelState::new(rs.model.clone(), rs.universal_k, rs.seed)?;
    for (i, gs) in sources.iter().zip(settings) {
        state.add_graph(i.id(), gs.slot(i.dataset))?;
    }
    let pairs: Vec<(&str, &GraphSettings)> = sources.iter().map(|i| i.id()).zip(settings).collect();
    hybrid_pretrain(&mut state, trainer, sources, &rs.schedule(&pairs), rs.checkpoint_dir.as_deref())?;
    Ok(state)
}

/// Fine-tune on a label-sparse target, either from a core pretrained on
/// `sources` or (when `sources` is empty) from scratch.
pub fn run_transfer(
    sources: &[GraphInput],
    source_settings: &[GraphSettings],
    target: GraphInput,
    target_settings: &GraphSettings,
    ratio: f64,
    rs: &RunSettings,
) -> Result<RunOutcome> {
    let mut trainer = rs.trainer();
    let mut state = if sources.is_empty() {
        let mut s = ModelState::new(rs.model.clone(), rs.universal_k, rs.seed)?;
        s.add_graph(target.id(), target_settings.slot(target.dataset))?;
        s
    } else {
        let pre = pretrain_sources(sources, source_settings, rs, &mut trainer)?;
        let ck = Checkpoint::from_state(&pre, SchedulePosition::default(), trainer.trained_tasks().clone());
        transfer_init(&ck, target.dataset, target_settings, rs.universal_k)?
    };
    let plan = target_settings.plan(target.id(), &rs.tasks, rs.rounds);
    fine_tune(&mut state, &mut trainer, target, &plan, rs.rounds, ratio, rs.seed)?;
    let mut acc = BTreeMap::new();
    evaluate_into(&state, &mut trainer, &target, &mut acc, rs.chunk)?;
    Ok(finish(state, trainer, acc))
}
