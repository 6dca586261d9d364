use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::report::{pairwise, Report, COUNTER_METRICS, SCHEMA_VERSION, TIMING_METRIC};
use super::{read, BenchError, Result};
use crate::stats::DEFAULT_BOOTSTRAP_ITERS;

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct ComparisonRow {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p: f64,
    pub p_bh: f64,
    pub cliffs_d: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let width = |f: fn(&ComparisonRow) -> &str, title: &str| {
            self.rows.iter().map(|r| f(r).len()).max().unwrap_or(0).max(title.len())
        };
        let (wa, wb, wm) = (width(|r| &r.a, "a"), width(|r| &r.b, "b"), width(|r| &r.metric, "metric"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<wa$}  {:<wb$}  {:<wm$}  {:>14}  {:>14}  {:>8}  {:>8}  {:>7}  {:>17}",
            "a", "b", "metric", "mean_a", "mean_b", "p", "p_bh", "cliff_d", "ci95"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<wa$}  {:<wb$}  {:<wm$}  {:>14.3}  {:>14.3}  {:>8.4}  {:>8.4}  {:>7.3}  [{:>6.3}, {:>6.3}]",
                r.a, r.b, r.metric, r.mean_a, r.mean_b, r.p, r.p_bh, r.cliffs_d, r.ci_low, r.ci_high
            );
        }
        out
    }
}

fn load(path: &Path) -> Result<Report> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| BenchError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(BenchError::Incompatible(format!(
            "{} has schema version {:?}, expected {SCHEMA_VERSION}",
            path.display(),
            version
        )));
    }
    serde_json::from_value(value).map_err(|source| BenchError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads JSON reports and compares them with one BH family across all tests.
pub fn cmd_compare<P: AsRef<Path>>(paths: &[P]) -> Result<Comparison> {
    let reports = paths
        .iter()
        .map(|p| Ok((p.as_ref().display().to_string(), load(p.as_ref())?)))
        .collect::<Result<Vec<_>>>()?;
    compare_reports(&reports, DEFAULT_BOOTSTRAP_ITERS, 0)
}

/// Entries of different reports are paired by runtime when the two reports
/// share one; otherwise every cross-report pair is compared.
pub fn compare_reports(reports: &[(String, Report)], bootstrap_iters: usize, seed: u64) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(BenchError::Incompatible("need at least two reports".into()));
    }
    let mut series = Vec::new();
    let mut owner = Vec::new();
    for (idx, (label, report)) in reports.iter().enumerate() {
        for (runtime, rt) in &report.runtimes {
            let mut metrics = rt.per_rep.clone();
            if let Some(t) = report.timing.runtimes.get(runtime) {
                metrics.insert(TIMING_METRIC.to_string(), t.per_rep_elapsed_us.clone());
            }
            series.push((format!("{label}:{runtime}"), metrics));
            owner.push((idx, runtime.clone()));
        }
    }

    let mut pairs = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let left: Vec<usize> = (0..series.len()).filter(|&e| owner[e].0 == i).collect();
            let right: Vec<usize> = (0..series.len()).filter(|&e| owner[e].0 == j).collect();
            let shared = left.iter().any(|&a| right.iter().any(|&b| owner[a].1 == owner[b].1));
            for &a in &left {
                for &b in &right {
                    if !shared || owner[a].1 == owner[b].1 {
                        pairs.push((a, b));
                    }
                }
            }
        }
    }

    let involved: BTreeSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let shared_counters: Vec<String> = COUNTER_METRICS
        .iter()
        .map(|m| m.to_string())
        .filter(|m| involved.iter().all(|&e| series[e].1.contains_key(m)))
        .collect();
    if involved.is_empty() || shared_counters.is_empty() {
        return Err(BenchError::Incompatible("reports share no counter metric".into()));
    }
    let mut metrics = shared_counters;
    if involved.iter().all(|&e| series[e].1.contains_key(TIMING_METRIC)) {
        metrics.push(TIMING_METRIC.to_string());
    }

    let entries = pairwise(&series, &pairs, &metrics, seed, bootstrap_iters)?;
    let lookup: BTreeMap<&str, &BTreeMap<String, Vec<f64>>> = series.iter().map(|(l, m)| (l.as_str(), m)).collect();
    let mean = |label: &str, metric: &str| {
        let v = &lookup[label][metric];
        v.iter().sum::<f64>() / v.len() as f64
    };
    let rows = entries
        .into_iter()
        .map(|e| ComparisonRow {
            mean_a: mean(&e.a, &e.metric),
            mean_b: mean(&e.b, &e.metric),
            a: e.a,
            b: e.b,
            metric: e.metric,
            p: e.p,
            p_bh: e.p_bh,
            cliffs_d: e.cliffs_d,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
        })
        .collect();
    Ok(Comparison { rows })
}
