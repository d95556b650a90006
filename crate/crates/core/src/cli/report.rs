use std::collections::{BTreeMap, BTreeSet};

use crate::error::{G5Error, Result};
use crate::io::MetricRecord;

/// Row key of a results table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ReportKey {
    pub source: String,
    pub target: String,
    pub k: String,
    pub ratio: String,
    pub strategy: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub key: ReportKey,
    /// One final accuracy per run (seed).
    pub values: Vec<f64>,
}

impl ReportRow {
    pub fn median(&self) -> f64 {
        median(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn run_fields(run: &str) -> Result<BTreeMap<&str, &str>> {
    let mut out = BTreeMap::new();
    for part in run.split(';') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| G5Error::Schema(format!("run id '{run}' is not a key=value list")))?;
        out.insert(k, v);
    }
    for field in ["src", "k", "ratio", "strategy"] {
        if !out.contains_key(field) {
            return Err(G5Error::Schema(format!("run id '{run}' lacks '{field}'")));
        }
    }
    Ok(out)
}

/// Final accuracies grouped by key: test-split accuracy for trained runs and
/// all-node accuracy for reasoning runs.
pub fn aggregate(records: &[MetricRecord]) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<ReportKey, BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        if r.metric != "accuracy" || !(r.split == "test" || r.split == "all") {
            continue;
        }
        let f = run_fields(&r.run)?;
        let key = ReportKey {
            source: f["src"].to_string(),
            target: r.graph.clone(),
            k: f["k"].to_string(),
            ratio: f["ratio"].to_string(),
            strategy: f["strategy"].to_string(),
        };
        groups.entry(key).or_default().insert(r.run.clone(), r.value);
    }
    Ok(groups
        .into_iter()
        .map(|(key, runs)| ReportRow {
            key,
            values: runs.into_values().collect(),
        })
        .collect())
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One line per key with the median over runs.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut t = vec![["source", "target", "k", "ratio", "strategy", "runs", "median", "mean"]
        .map(String::from)
        .to_vec()];
    for r in rows {
        t.push(vec![
            r.key.source.clone(),
            r.key.target.clone(),
            r.key.k.clone(),
            r.key.ratio.clone(),
            r.key.strategy.clone(),
            r.values.len().to_string(),
            format!("{:.3}", r.median()),
            format!("{:.3}", r.mean()),
        ]);
    }
    align(&t)
}

/// Source/target pairs against sampling ratios, medians in the cells.
pub fn render_ratio_pivot(rows: &[ReportRow]) -> String {
    let rows: Vec<&ReportRow> = rows.iter().filter(|r| r.key.ratio != "-").collect();
    let mut ratios: Vec<String> = rows
        .iter()
        .map(|r| r.key.ratio.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    ratios.sort_by(|a, b| a.parse::<f64>().unwrap_or(f64::MAX).total_cmp(&b.parse().unwrap_or(f64::MAX)));
    let mut cells: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &rows {
        cells
            .entry((r.key.source.clone(), r.key.target.clone()))
            .or_default()
            .insert(r.key.ratio.clone(), r.median());
    }
    let mut header = vec!["source".to_string(), "target".to_string()];
    header.extend(ratios.iter().map(|r| format!("{}%", r.parse::<f64>().map(|x| x * 100.0).unwrap_or(f64::NAN))));
    let mut t = vec![header];
    for ((s, tg), by_ratio) in cells {
        let mut line = vec![s, tg];
        line.extend(
            ratios
                .iter()
                .map(|r| by_ratio.get(r).map_or("-".to_string(), |v| format!("{v:.3}"))),
        );
        t.push(line);
    }
    align(&t)
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("source,target,k,ratio,strategy,runs,median,mean\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.key.source,
            r.key.target,
            r.key.k,
            r.key.ratio,
            r.key.strategy,
            r.values.len(),
            r.median(),
            r.mean()
        ));
    }
    out
}
