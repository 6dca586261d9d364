use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{RunTraceWithShape, Result};
use crate::scenario::{Dag, GraphShape, Runtime, Sample, ScenarioSpec, Topology};
use crate::stats::{
    bh_adjust, bootstrap_ci, budget_score, cliffs_d, object_ratio, perf_score, propagation_efficiency, rank_sum_p,
    tradeoff_score, MetricSpec, PropagationEfficiency, Summary,
};
use crate::LiveCounts;

pub const SCHEMA_VERSION: u32 = 1;

/// Deterministic metrics, in report order.
pub const COUNTER_METRICS: [&str; 4] = ["recomputations", "notifications", "live_objects", "retained_subscriptions"];
/// The wall-clock metric; reported only under `timing`.
pub const TIMING_METRIC: &str = "elapsed_us";

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: ScenarioInfo,
    pub graph: GraphShape,
    pub runtimes: BTreeMap<String, RuntimeReport>,
    /// Rank-sum comparisons of per-repetition counter aggregates.
    pub pairwise: Vec<PairwiseEntry>,
    pub composite: Composite,
    /// Total live objects after build, relative to the signal runtime.
    pub object_ratios: BTreeMap<String, f64>,
    pub timing: TimingSection,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInfo {
    pub id: String,
    pub topology: Topology,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub updates: usize,
    pub repetitions: usize,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeReport {
    pub oracle_match: bool,
    pub nodes: usize,
    pub edges: usize,
    pub live_after_build: LiveCounts,
    /// Work counters summed over every update of every repetition.
    pub totals: BTreeMap<String, u64>,
    /// Per-update distributions.
    pub metrics: BTreeMap<String, Summary>,
    /// One aggregate per repetition: sums for work counters, per-update
    /// means for live-object counters.
    pub per_rep: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairwiseEntry {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub r: f64,
    pub n: usize,
    pub p: f64,
    pub p_normal: f64,
    /// Benjamini-Hochberg adjusted `p` within the entry's family.
    pub p_bh: f64,
    pub cliffs_d: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tradeoff {
    pub p: f64,
    pub d: f64,
    pub c: f64,
    pub t: f64,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composite {
    pub perf_score: BTreeMap<String, f64>,
    pub tradeoff: BTreeMap<String, Tradeoff>,
    /// Present only when all three runtimes ran.
    pub budget: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub runtimes: BTreeMap<String, RuntimeTiming>,
    pub pairwise: Vec<PairwiseEntry>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeTiming {
    pub elapsed_us: Summary,
    /// Mean per-update time of each repetition.
    pub per_rep_elapsed_us: Vec<f64>,
    /// Absent when the clock measured no time at all.
    pub propagation_efficiency: Option<PropagationEfficiency>,
}

/// Removes the wall-clock section of a JSON report, re-serialized.
pub fn strip_timing(report_json: &str) -> serde_json::Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string_pretty(&value)
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// One row per runtime and metric with per-update statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("runtime,metric,mean,std,p50,p90,p99\n");
        for (name, rt) in &self.runtimes {
            let timing = self.timing.runtimes.get(name).map(|t| (TIMING_METRIC, &t.elapsed_us));
            let rows = COUNTER_METRICS.iter().map(|&m| (m, &rt.metrics[m])).chain(timing);
            for (metric, s) in rows {
                let _ = writeln!(out, "{name},{metric},{},{},{},{},{}", s.mean, s.std, s.p50, s.p90, s.p99);
            }
        }
        out
    }
}

fn by_rep<T: Copy>(samples: &[Sample], reps: usize, f: impl Fn(&Sample) -> T) -> Vec<Vec<T>> {
    let mut groups = vec![Vec::new(); reps];
    for s in samples {
        groups[s.repetition].push(f(s));
    }
    groups
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn counter_series(s: &Sample, metric: &str) -> f64 {
    match metric {
        "recomputations" => s.recomputations as f64,
        "notifications" => s.notifications as f64,
        "live_objects" => s.live.total_objects() as f64,
        "retained_subscriptions" => s.live.retained_subscriptions as f64,
        other => unreachable!("unknown metric {other}"),
    }
}

fn per_rep_aggregate(samples: &[Sample], reps: usize, metric: &str) -> Vec<f64> {
    let groups = by_rep(samples, reps, |s| counter_series(s, metric));
    match metric {
        "recomputations" | "notifications" => groups.iter().map(|g| g.iter().sum()).collect(),
        _ => groups.iter().map(|g| mean(g)).collect(),
    }
}

/// Rank-sum, Cliff's d and a bootstrap interval for every runtime pair and
/// metric, BH-adjusted as one family.
pub(crate) fn pairwise(
    series: &[(String, BTreeMap<String, Vec<f64>>)],
    pairs: &[(usize, usize)],
    metrics: &[String],
    seed: u64,
    bootstrap_iters: usize,
) -> Result<Vec<PairwiseEntry>> {
    let mut entries = Vec::new();
    for &(i, j) in pairs {
        for metric in metrics {
            let (x, y) = (&series[i].1[metric], &series[j].1[metric]);
            let rs = rank_sum_p(x, y)?;
            let d = cliffs_d(x, y)?;
            let boot_seed = seed.wrapping_add(entries.len() as u64);
            let (lo, hi) = bootstrap_ci(|a, b| cliffs_d(a, b).unwrap_or(0.0), x, y, bootstrap_iters, boot_seed)?;
            entries.push(PairwiseEntry {
                a: series[i].0.clone(),
                b: series[j].0.clone(),
                metric: metric.clone(),
                r: rs.r,
                n: rs.n,
                p: rs.p,
                p_normal: rs.p_normal,
                p_bh: rs.p,
                cliffs_d: d,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    let adjusted = bh_adjust(&entries.iter().map(|e| e.p).collect::<Vec<_>>())?;
    for (e, p) in entries.iter_mut().zip(adjusted) {
        e.p_bh = p;
    }
    Ok(entries)
}

/// Min-max scaling into [0.1, 1] so that no factor vanishes; `higher_better`
/// flips the direction. Equal inputs all map to 1.
fn scale(values: &[f64], higher_better: bool) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if hi == lo {
                1.0
            } else {
                let t = (v - lo) / (hi - lo);
                0.1 + 0.9 * if higher_better { t } else { 1.0 - t }
            }
        })
        .collect()
}

pub(crate) fn assemble(
    spec: &ScenarioSpec,
    dag: &Dag,
    repetitions: usize,
    traces: &[RunTraceWithShape],
    weights: &[MetricSpec],
    bootstrap_iters: usize,
) -> Result<Report> {
    let mut runtimes = BTreeMap::new();
    let mut timing = TimingSection::default();
    let mut counter_series_by_rt = Vec::new();
    let mut timing_series_by_rt = Vec::new();

    for t in traces {
        let name = t.trace.runtime.to_string();
        let samples = &t.trace.samples;
        let mut metrics = BTreeMap::new();
        let mut per_rep = BTreeMap::new();
        for metric in COUNTER_METRICS {
            let values: Vec<f64> = samples.iter().map(|s| counter_series(s, metric)).collect();
            metrics.insert(metric.to_string(), Summary::of(&values)?);
            per_rep.insert(metric.to_string(), per_rep_aggregate(samples, repetitions, metric));
        }
        let totals = BTreeMap::from([
            ("recomputations".to_string(), t.trace.total_recomputations()),
            ("notifications".to_string(), t.trace.total_notifications()),
        ]);

        let elapsed: Vec<f64> = samples.iter().map(|s| s.elapsed_s * 1e6).collect();
        let per_rep_elapsed: Vec<f64> = by_rep(samples, repetitions, |s| s.elapsed_s * 1e6)
            .iter()
            .map(|g| mean(g))
            .collect();
        timing.runtimes.insert(
            name.clone(),
            RuntimeTiming {
                elapsed_us: Summary::of(&elapsed)?,
                per_rep_elapsed_us: per_rep_elapsed.clone(),
                propagation_efficiency: propagation_efficiency(&t.trace, dag.shape()).ok(),
            },
        );
        timing_series_by_rt.push((name.clone(), BTreeMap::from([(TIMING_METRIC.to_string(), per_rep_elapsed)])));
        counter_series_by_rt.push((name.clone(), per_rep.clone()));

        runtimes.insert(
            name,
            RuntimeReport {
                oracle_match: true,
                nodes: t.nodes,
                edges: t.edges,
                live_after_build: t.live_after_build,
                totals,
                metrics,
                per_rep,
            },
        );
    }

    let pairs: Vec<(usize, usize)> = (0..traces.len())
        .flat_map(|i| (i + 1..traces.len()).map(move |j| (i, j)))
        .collect();
    let counter_names: Vec<String> = COUNTER_METRICS.iter().map(|m| m.to_string()).collect();
    let pairwise_counters = pairwise(&counter_series_by_rt, &pairs, &counter_names, spec.seed, bootstrap_iters)?;
    timing.pairwise = pairwise(
        &timing_series_by_rt,
        &pairs,
        &[TIMING_METRIC.to_string()],
        spec.seed,
        bootstrap_iters,
    )?;

    let composite = composite(traces, &runtimes, weights)?;

    let mut object_ratios = BTreeMap::new();
    if let Some(sig) = runtimes.get(Runtime::Signals.as_str()) {
        for (name, rt) in &runtimes {
            if name != Runtime::Signals.as_str() {
                object_ratios.insert(
                    format!("{name}/signals"),
                    object_ratio(rt.live_after_build, sig.live_after_build)?,
                );
            }
        }
    }

    Ok(Report {
        schema_version: SCHEMA_VERSION,
        scenario: ScenarioInfo {
            id: spec.id(),
            topology: spec.topology,
            n: dag.node_count(),
            d: spec.d,
            seed: spec.seed,
            updates: traces.first().map_or(0, |t| t.trace.samples.len() / repetitions),
            repetitions,
        },
        graph: dag.shape(),
        runtimes,
        pairwise: pairwise_counters,
        composite,
        object_ratios,
        timing,
    })
}

fn composite(
    traces: &[RunTraceWithShape],
    runtimes: &BTreeMap<String, RuntimeReport>,
    weights: &[MetricSpec],
) -> Result<Composite> {
    let mut out = Composite::default();
    for (name, rt) in runtimes {
        let measurements: Vec<(f64, MetricSpec)> = weights
            .iter()
            .map(|w| (mean(&rt.per_rep[&w.name]), w.clone()))
            .collect();
        out.perf_score.insert(name.clone(), perf_score(&measurements)?);
    }

    let names: Vec<String> = traces.iter().map(|t| t.trace.runtime.to_string()).collect();
    let metric_mean = |metric: &str| -> Vec<f64> { names.iter().map(|n| runtimes[n].metrics[metric].mean).collect() };
    let work: Vec<f64> = metric_mean("recomputations")
        .iter()
        .zip(metric_mean("notifications"))
        .map(|(r, n)| r + n)
        .collect();
    let p = scale(&work, false);
    let d = scale(&metric_mean("retained_subscriptions"), false);
    let c = scale(&metric_mean("live_objects"), true);
    for (i, name) in names.iter().enumerate() {
        let t = tradeoff_score(p[i], d[i], c[i])?;
        out.tradeoff.insert(
            name.clone(),
            Tradeoff {
                p: p[i],
                d: d[i],
                c: c[i],
                t,
            },
        );
    }
    let t_of = |rt: Runtime| out.tradeoff.get(rt.as_str()).map(|t| t.t);
    if let (Some(sig), Some(store), Some(obs)) = (t_of(Runtime::Signals), t_of(Runtime::Store), t_of(Runtime::Observables)) {
        out.budget = Some(budget_score(sig, store, obs)?);
    }
    Ok(out)
}
