use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{G5Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reconstruct,
    Structure,
    Classify,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Reconstruct, Task::Structure, Task::Classify];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Reconstruct => "reconstruct",
            Task::Structure => "structure",
            Task::Classify => "classify",
        }
    }

    pub fn is_supervised(self) -> bool {
        self == Task::Classify
    }

    pub fn parse(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| G5Error::Config(format!("unknown task '{s}'")))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSegment {
    pub task: Task,
    pub epochs: usize,
}

/// What one graph trains on in every round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPlan {
    pub graph: String,
    pub segments: Vec<TaskSegment>,
    pub lr: f64,
    pub weight_decay: f64,
}

impl GraphPlan {
    /// One segment per task with `ceil(total_epochs / rounds)` epochs each.
    pub fn even(graph: &str, tasks: &[Task], total_epochs: usize, rounds: usize, lr: f64, weight_decay: f64) -> Self {
        let per = total_epochs.div_ceil(rounds.max(1));
        GraphPlan {
            graph: graph.to_string(),
            segments: tasks.iter().map(|&task| TaskSegment { task, epochs: per }).collect(),
            lr,
            weight_decay,
        }
    }

    pub fn has_supervised(&self) -> bool {
        self.segments.iter().any(|s| s.task.is_supervised())
    }
}

/// Rounds over graphs over task segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub plans: Vec<GraphPlan>,
    pub rounds: usize,
    /// Stop after a round in which every segment's final loss moved by less
    /// than this fraction relative to the previous round.
    pub early_stop: Option<f64>,
}

impl TaskSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(G5Error::Config("schedule needs at least one round".into()));
        }
        if self.plans.is_empty() {
            return Err(G5Error::Config("schedule has no graphs".into()));
        }
        for p in &self.plans {
            if p.segments.is_empty() {
                return Err(G5Error::Config(format!("graph '{}' has no task segments", p.graph)));
            }
            if let Some(s) = p.segments.iter().find(|s| s.epochs == 0) {
                return Err(G5Error::Config(format!(
                    "graph '{}': segment '{}' has zero epochs",
                    p.graph, s.task
                )));
            }
            if !(p.lr >= 0.0) || !(p.weight_decay >= 0.0) {
                return Err(G5Error::Config(format!(
                    "graph '{}': learning rate and weight decay must be non-negative",
                    p.graph
                )));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.rounds
            * self
                .plans
                .iter()
                .flat_map(|p| &p.segments)
                .map(|s| s.epochs)
                .sum::<usize>()
    }
}

impl fmt::Display for TaskSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rounds: {}", self.rounds)?;
        if let Some(t) = self.early_stop {
            writeln!(f, "early stop below {:.2}% loss shift", t * 100.0)?;
        }
        for p in &self.plans {
            let segs: Vec<String> = p
                .segments
                .iter()
                .map(|s| format!("{} x{}", s.task, s.epochs))
                .collect();
            writeln!(
                f,
                "  {}: lr {} wd {} | {}",
                p.graph,
                p.lr,
                p.weight_decay,
                segs.join(" -> ")
            )?;
        }
        write!(f, "total epochs: {}", self.total_epochs())
    }
}
