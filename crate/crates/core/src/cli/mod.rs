//! Command-line front end: `preprocess`, `train`, `reason` and `report`.

mod config;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{GraphEntry, RunConfig, RunMode};
pub use report::{aggregate, median, render_csv, render_ratio_pivot, render_table, ReportKey, ReportRow};

use crate::apocalypse::{reason_from_checkpoint, ApocalypseOutcome, Strategy};
use crate::error::{G5Error, Result};
use crate::graph::GraphDataset;
use crate::io::{export_metrics, load_checkpoint, read_metrics, save_checkpoint, Checkpoint, MetricRecord, SchedulePosition};
use crate::preprocess::cache::{load_or_build, CacheStatus};
use crate::preprocess::SubgraphBatch;
use crate::training::{pretrain_sources, run_isolated, run_mixed, run_transfer, GraphInput, RunOutcome};

#[derive(Debug, Parser)]
#[command(name = "g5", version, about = "Multi-graph transformer training, transfer and zero-label reasoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build intimacy, context, WL and hop caches for every configured graph.
    Preprocess(RunArgs),
    /// Train in the configured mode; writes a checkpoint and metrics.
    Train(RunArgs),
    /// Reason about target labels from a pretrained checkpoint.
    Reason(RunArgs),
    /// Aggregate metrics files into result tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<RunMode>,
    #[arg(long, value_parser = Strategy::parse)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate the config and print the resolved schedule, then stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files written by `train` or `reason`.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.ratio {
            cfg.ratio = r;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => {
            let cfg = a.resolve()?;
            if a.dry_run {
                return dry_run(&cfg, out);
            }
            cmd_preprocess(&cfg, out)
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            if a.dry_run {
                return dry_run(&cfg, out);
            }
            cmd_train(&cfg, out)
        }
        Command::Reason(a) => {
            let mut cfg = a.resolve()?;
            cfg.mode = RunMode::Apocalypse;
            cfg.validate()?;
            if a.dry_run {
                return dry_run(&cfg, out);
            }
            cmd_reason(&cfg, out)
        }
        Command::Report(a) => cmd_report(&a.metrics, a.out.as_deref(), out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| G5Error::io("<stdout>", e))
}

fn dry_run(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    say(out, format!("mode: {}", cfg.mode))?;
    say(out, format!("run: {}", cfg.run_id()))?;
    say(out, format!("cache: {}", cfg.cache_dir().display()))?;
    say(out, format!("output: {}", cfg.out_dir.display()))?;
    say(out, cfg.schedule().to_string())
}

struct Loaded {
    dataset: GraphDataset,
    batch: SubgraphBatch,
}

fn load_prepared(cfg: &RunConfig, id: &str, out: &mut dyn Write) -> Result<Loaded> {
    let dataset = cfg.load_graph(id)?;
    let k = cfg.graph_settings(id)?.k;
    let (batch, status) = load_or_build(&dataset, k, &cfg.preprocess, &cfg.cache_dir())?;
    match status {
        CacheStatus::Fresh => say(out, format!("{id}: cache fresh, skipped"))?,
        CacheStatus::Built => say(out, format!("{id}: cache built"))?,
    }
    Ok(Loaded { dataset, batch })
}

fn needed_graphs(cfg: &RunConfig) -> Vec<String> {
    let mut ids = cfg.training_graphs();
    if let Some(t) = &cfg.target {
        if matches!(cfg.mode, RunMode::Transfer | RunMode::Apocalypse) && !ids.contains(t) {
            ids.push(t.clone());
        }
    }
    ids
}

pub fn cmd_preprocess(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    for id in cfg.graphs.keys() {
        load_prepared(cfg, id, out)?;
    }
    Ok(())
}

fn fresh_metrics(cfg: &RunConfig, records: &[MetricRecord]) -> Result<PathBuf> {
    let path = cfg.out_dir.join("metrics.csv");
    if path.exists() {
        std::fs::remove_file(&path).map_err(|e| G5Error::io(&path, e))?;
    }
    export_metrics(records, &path)?;
    Ok(path)
}

fn report_accuracy(out: &mut dyn Write, accuracy: &BTreeMap<String, f64>) -> Result<()> {
    for (g, a) in accuracy {
        say(out, format!("{g}: test accuracy {a:.4}"))?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ids = needed_graphs(cfg);
    let mut loaded = BTreeMap::new();
    for id in &ids {
        loaded.insert(id.clone(), load_prepared(cfg, id, out)?);
    }
    let input = |id: &str| GraphInput::new(&loaded[id].dataset, &loaded[id].batch);
    let rs = cfg.run_settings(cfg.run_id());
    let sources = cfg.training_graphs();
    let position = SchedulePosition {
        round: cfg.rounds,
        graph: None,
        task: None,
    };
    let mut metrics = Vec::new();
    match cfg.mode {
        RunMode::Isolated => {
            for id in &sources {
                let o = run_isolated(input(id), &cfg.graph_settings(id)?, &rs)?;
                save_checkpoint(&o.checkpoint(position.clone()), &cfg.out_dir.join(format!("final-{id}.g5ck")))?;
                report_accuracy(out, &o.accuracy)?;
                metrics.extend(o.metrics);
            }
        }
        RunMode::Mixed => {
            let inputs: Vec<GraphInput> = sources.iter().map(|id| input(id)).collect();
            let settings = sources.iter().map(|id| cfg.graph_settings(id)).collect::<Result<Vec<_>>>()?;
            let o = run_mixed(&inputs, &settings, &rs)?;
            finish_outcome(cfg, &o, position, out)?;
            metrics = o.metrics;
        }
        RunMode::Transfer => {
            let target = cfg.target.as_deref().expect("validated");
            let inputs: Vec<GraphInput> = sources.iter().map(|id| input(id)).collect();
            let settings = sources.iter().map(|id| cfg.graph_settings(id)).collect::<Result<Vec<_>>>()?;
            let o = run_transfer(&inputs, &settings, input(target), &cfg.graph_settings(target)?, cfg.ratio, &rs)?;
            finish_outcome(cfg, &o, position, out)?;
            metrics = o.metrics;
        }
        RunMode::Apocalypse => {
            let target = cfg.target.as_deref().expect("validated");
            loaded[target].dataset.seal_labels();
            let inputs: Vec<GraphInput> = sources.iter().map(|id| input(id)).collect();
            let settings = sources.iter().map(|id| cfg.graph_settings(id)).collect::<Result<Vec<_>>>()?;
            let mut trainer = rs.trainer();
            let pre = pretrain_sources(&inputs, &settings, &rs, &mut trainer)?;
            let ck = Checkpoint::from_state(&pre, position, trainer.trained_tasks().clone());
            save_checkpoint(&ck, &cfg.out_dir.join("pretrained.g5ck"))?;
            let o = reason_from_checkpoint(
                &ck,
                sources.clone(),
                input(target),
                &cfg.graph_settings(target)?,
                cfg.strategy,
                &cfg.reason,
                &rs,
                trainer,
            )?;
            finish_reasoning(cfg, &loaded[target].dataset, &o, out)?;
            metrics = o.metrics;
        }
    }
    let path = fresh_metrics(cfg, &metrics)?;
    say(out, format!("metrics: {}", path.display()))
}

fn finish_outcome(cfg: &RunConfig, o: &RunOutcome, position: SchedulePosition, out: &mut dyn Write) -> Result<()> {
    save_checkpoint(&o.checkpoint(position), &cfg.out_dir.join("final.g5ck"))?;
    report_accuracy(out, &o.accuracy)
}

fn finish_reasoning(cfg: &RunConfig, target: &GraphDataset, o: &ApocalypseOutcome, out: &mut dyn Write) -> Result<()> {
    let csv = cfg
        .out_dir
        .join(format!("reasoned-{}-{}.csv", target.id(), cfg.strategy));
    o.reasoned.export_csv(target, &csv)?;
    say(
        out,
        format!(
            "{} via {}: accuracy {:.4}, random baseline {:.3}, class entropy {:.3}",
            target.id(),
            cfg.strategy,
            o.accuracy,
            o.random_baseline,
            o.class_entropy
        ),
    )?;
    say(out, format!("reasoned labels: {}", csv.display()))
}

pub fn cmd_reason(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let target = cfg.target.as_deref().expect("validated");
    let ck_path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("pretrained.g5ck"));
    let ck = load_checkpoint(&ck_path)?;
    let loaded = load_prepared(cfg, target, out)?;
    loaded.dataset.seal_labels();
    let rs = cfg.run_settings(cfg.run_id());
    let o = reason_from_checkpoint(
        &ck,
        cfg.sources.clone(),
        GraphInput::new(&loaded.dataset, &loaded.batch),
        &cfg.graph_settings(target)?,
        cfg.strategy,
        &cfg.reason,
        &rs,
        rs.trainer(),
    )?;
    finish_reasoning(cfg, &loaded.dataset, &o, out)?;
    let path = fresh_metrics(cfg, &o.metrics)?;
    say(out, format!("metrics: {}", path.display()))
}

pub fn cmd_report(paths: &[PathBuf], csv_out: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_metrics(p)?);
    }
    let rows = aggregate(&records)?;
    out.write_all(render_table(&rows).as_bytes())
        .map_err(|e| G5Error::io("<stdout>", e))?;
    if rows.iter().any(|r| r.key.ratio != "-") {
        say(out, "")?;
        out.write_all(render_ratio_pivot(&rows).as_bytes())
            .map_err(|e| G5Error::io("<stdout>", e))?;
    }
    if let Some(p) = csv_out {
        crate::io::write_atomic(p, render_csv(&rows).as_bytes())?;
    }
    Ok(())
}
