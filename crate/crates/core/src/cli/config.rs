use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apocalypse::{ReasonSettings, Strategy};
use crate::error::{G5Error, Result};
use crate::graph::{load_citation_graph, make_split, GraphDataset, SplitPolicy};
use crate::model::ModelConfig;
use crate::preprocess::PreprocessConfig;
use crate::training::{GraphSettings, RunSettings, Task, TaskSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Isolated,
    Mixed,
    Transfer,
    Apocalypse,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Isolated => "isolated",
            RunMode::Mixed => "mixed",
            RunMode::Transfer => "transfer",
            RunMode::Apocalypse => "apocalypse",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One graph's files and optional overrides of the benchmark defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphEntry {
    pub content: PathBuf,
    pub cites: PathBuf,
    pub k: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub weight_decay: Option<f64>,
}

/// Everything a command needs, as read from the TOML run file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Pretraining graphs in visit order. Isolated runs train each in turn.
    #[serde(default)]
    pub sources: Vec<String>,
    pub target: Option<String>,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Pretrained state for the reasoning command.
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_universal_k")]
    pub universal_k: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub early_stop: Option<f64>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default)]
    pub split: SplitPolicy,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub reason: ReasonSettings,
    pub graphs: BTreeMap<String, GraphEntry>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_ratio() -> f64 {
    1.0
}
fn default_strategy() -> Strategy {
    Strategy::Cccm
}
fn default_universal_k() -> usize {
    15
}
fn default_rounds() -> usize {
    3
}
fn default_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}
fn default_chunk() -> usize {
    256
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| G5Error::Config(e.to_string()))
    }

    /// Read a run file; relative data, cache, output and checkpoint paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| G5Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.out_dir);
        if let Some(p) = cfg.cache_dir.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.checkpoint.as_mut() {
            rebase(p);
        }
        for g in cfg.graphs.values_mut() {
            rebase(&mut g.content);
            rebase(&mut g.cites);
        }
        Ok(cfg)
    }

    /// Check everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.preprocess.validate()?;
        self.reason.validate()?;
        if self.graphs.is_empty() {
            return Err(G5Error::Config("no graphs configured".into()));
        }
        if self.tasks.is_empty() {
            return Err(G5Error::Config("no tasks configured".into()));
        }
        if self.chunk == 0 || self.universal_k == 0 {
            return Err(G5Error::Config("chunk and universal_k must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(G5Error::Config(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        for id in self.sources.iter().chain(&self.target) {
            if !self.graphs.contains_key(id) {
                return Err(G5Error::Config(format!("graph '{id}' is not defined under [graphs]")));
            }
        }
        for (id, g) in &self.graphs {
            for p in [&g.content, &g.cites] {
                if !p.is_file() {
                    return Err(G5Error::Config(format!("graph '{id}': missing data file {}", p.display())));
                }
            }
            self.graph_settings(id)?;
        }
        match self.mode {
            RunMode::Isolated | RunMode::Mixed => {}
            RunMode::Transfer | RunMode::Apocalypse => {
                let Some(t) = &self.target else {
                    return Err(G5Error::Config(format!("{} mode needs a target graph", self.mode)));
                };
                if self.sources.contains(t) {
                    return Err(G5Error::Config(format!("target '{t}' is also listed as a source")));
                }
                if self.mode == RunMode::Apocalypse && self.sources.is_empty() {
                    return Err(G5Error::Config("apocalypse mode needs at least one source".into()));
                }
            }
        }
        self.schedule().validate()
    }

    /// Benchmark defaults for known graph names, overridden per entry.
    pub fn graph_settings(&self, id: &str) -> Result<GraphSettings> {
        let entry = self
            .graphs
            .get(id)
            .ok_or_else(|| G5Error::Config(format!("graph '{id}' is not defined")))?;
        let base = GraphSettings::benchmark(id);
        let pick = |field: &str, v: Option<f64>, d: Option<f64>| {
            v.or(d)
                .ok_or_else(|| G5Error::Config(format!("graph '{id}': '{field}' is required for non-benchmark graphs")))
        };
        let k = entry
            .k
            .or(base.as_ref().map(|b| b.k))
            .ok_or_else(|| G5Error::Config(format!("graph '{id}': 'k' is required for non-benchmark graphs")))?;
        let epochs = entry
            .epochs
            .or(base.as_ref().map(|b| b.epochs))
            .ok_or_else(|| G5Error::Config(format!("graph '{id}': 'epochs' is required for non-benchmark graphs")))?;
        let lr = pick("lr", entry.lr, base.as_ref().map(|b| b.lr))?;
        let weight_decay = entry.weight_decay.or(base.as_ref().map(|b| b.weight_decay)).unwrap_or(5e-4);
        if k == 0 {
            return Err(G5Error::Config(format!("graph '{id}': k must be positive")));
        }
        Ok(GraphSettings {
            k,
            lr,
            epochs,
            weight_decay,
        })
    }

    /// Graphs trained in visit order: `sources`, or every configured graph.
    pub fn training_graphs(&self) -> Vec<String> {
        match self.mode {
            RunMode::Isolated | RunMode::Mixed if self.sources.is_empty() => self.graphs.keys().cloned().collect(),
            _ => self.sources.clone(),
        }
    }

    pub fn run_settings(&self, run_id: String) -> RunSettings {
        RunSettings {
            run_id,
            model: self.model.clone(),
            rounds: self.rounds,
            early_stop: self.early_stop,
            tasks: self.tasks.clone(),
            seed: self.seed,
            universal_k: self.universal_k,
            chunk: self.chunk,
            checkpoint_dir: Some(self.out_dir.join("checkpoints")),
        }
    }

    /// The pretraining schedule this config resolves to.
    pub fn schedule(&self) -> TaskSchedule {
        let rs = self.run_settings(String::new());
        let mut plans = Vec::new();
        for id in self.training_graphs() {
            if let Ok(gs) = self.graph_settings(&id) {
                let tasks: &[Task] = &rs.tasks;
                plans.push(gs.plan(&id, tasks, rs.rounds));
            }
        }
        if let (RunMode::Transfer | RunMode::Apocalypse, Some(t)) = (self.mode, &self.target) {
            if let Ok(gs) = self.graph_settings(t) {
                let tasks = if self.mode == RunMode::Apocalypse {
                    vec![Task::Reconstruct, Task::Structure]
                } else {
                    rs.tasks.clone()
                };
                plans.push(gs.plan(t, &tasks, rs.rounds));
            }
        }
        TaskSchedule {
            plans,
            rounds: rs.rounds,
            early_stop: rs.early_stop,
        }
    }

    /// Run identifier; encodes the fields reports are keyed by.
    pub fn run_id(&self) -> String {
        let src = if self.sources.is_empty() {
            "-".to_string()
        } else {
            self.sources.join("+")
        };
        let k = match self.mode {
            RunMode::Isolated => "own".to_string(),
            _ => self.universal_k.to_string(),
        };
        let ratio = match self.mode {
            RunMode::Transfer => self.ratio.to_string(),
            _ => "-".into(),
        };
        let strategy = match self.mode {
            RunMode::Apocalypse => self.strategy.as_str(),
            _ => "-",
        };
        format!(
            "mode={};src={src};k={k};ratio={ratio};strategy={strategy};seed={}",
            self.mode, self.seed
        )
    }

    /// Location of preprocess caches: `G5_CACHE_DIR`, then `cache_dir`, then
    /// `<out_dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os("G5_CACHE_DIR")
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Load one graph and apply the configured split.
    pub fn load_graph(&self, id: &str) -> Result<GraphDataset> {
        let entry = self
            .graphs
            .get(id)
            .ok_or_else(|| G5Error::Config(format!("graph '{id}' is not defined")))?;
        let ds = load_citation_graph(&entry.content, &entry.cites, id)?;
        make_split(ds, self.seed, &self.split)
    }
}
