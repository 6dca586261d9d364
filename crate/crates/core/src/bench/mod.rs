//! Benchmark orchestration: run a scenario on the selected runtimes, check
//! every repetition against the oracle, and assemble a report.
//!
//! Counter-derived report fields are a pure function of the scenario and
//! seed. Everything derived from wall-clock time lives under the report's
//! `timing` key, which [`strip_timing`] removes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

mod compare;
mod report;

pub use compare::{cmd_compare, compare_reports, Comparison, ComparisonRow};
pub use report::{
    strip_timing, Composite, PairwiseEntry, Report, RuntimeReport, RuntimeTiming, ScenarioInfo, TimingSection,
    Tradeoff, COUNTER_METRICS, SCHEMA_VERSION, TIMING_METRIC,
};

use crate::scenario::{
    build, generate, run_script, verify, OracleMismatch, Runtime, RunTrace, ScenarioError, ScenarioSpec,
};
use crate::stats::{MetricSpec, StatsError, DEFAULT_BOOTSTRAP_ITERS};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SIGBENCH_OUT_DIR";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("oracle mismatch in repetition {repetition}: {mismatch}")]
    OracleMismatch {
        repetition: usize,
        mismatch: OracleMismatch,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible reports: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub runtimes: Vec<Runtime>,
    /// Overrides the scenario file's repetitions.
    pub repetitions: Option<usize>,
    /// Overrides the scenario file's seed; also seeds bootstrap resampling.
    pub seed: Option<u64>,
    pub format: Format,
    /// Defaults to `<$SIGBENCH_OUT_DIR or .>/<scenario id>.<format>`.
    pub out: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub bootstrap_iters: usize,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>) -> Self {
        RunConfig {
            scenario: scenario.into(),
            runtimes: Runtime::ALL.to_vec(),
            repetitions: None,
            seed: None,
            format: Format::Json,
            out: None,
            weights: None,
            bootstrap_iters: DEFAULT_BOOTSTRAP_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runtimes.is_empty() {
            return Err(BenchError::Config("no runtime selected".into()));
        }
        if self.repetitions == Some(0) {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        if self.bootstrap_iters == 0 {
            return Err(BenchError::Config("bootstrap iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn output_path(&self, spec: &ScenarioSpec) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        dir.join(format!("{}.{}", spec.id(), self.format.extension()))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightEntry {
    #[serde(default)]
    baseline: f64,
    #[serde(default = "unit_weight")]
    weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Baselines and importance weights for the counter metrics. The weights
/// file maps metric names to `{"baseline": B, "weight": I}`; metrics it does
/// not mention get `B = 0`, `I = 1`.
pub fn load_weights(path: Option<&Path>) -> Result<Vec<MetricSpec>> {
    let mut given: BTreeMap<String, WeightEntry> = match path {
        None => BTreeMap::new(),
        Some(p) => {
            let text = read(p)?;
            serde_json::from_str(&text).map_err(|source| BenchError::Json {
                path: p.to_path_buf(),
                source,
            })?
        }
    };
    let specs = COUNTER_METRICS
        .iter()
        .map(|&name| match given.remove(name) {
            Some(e) => MetricSpec::new(name, e.baseline, e.weight),
            None => MetricSpec::new(name, 0.0, 1.0),
        })
        .collect();
    if let Some(unknown) = given.keys().next() {
        return Err(BenchError::Config(format!("weights file names unknown metric {unknown:?}")));
    }
    Ok(specs)
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every repetition of `spec` on each runtime, one fresh instance per
/// repetition, and checks each against the oracle.
pub fn collect_traces(spec: &ScenarioSpec, runtimes: &[Runtime], repetitions: usize) -> Result<Vec<RunTraceWithShape>> {
    let dag = generate(spec)?;
    let script = spec.full_script(&dag)?;
    if script.is_empty() {
        return Err(BenchError::Config("scenario has no updates".into()));
    }
    let mut out = Vec::new();
    for &runtime in runtimes {
        let mut trace = RunTrace::new(runtime, spec.id());
        let mut built = None;
        for repetition in 0..repetitions {
            let mut instance = build(runtime, &dag)?;
            built.get_or_insert((instance.graph_size(), instance.live_counts()));
            trace.samples.extend(run_script(instance.as_mut(), &script, repetition)?);
            verify(instance.as_ref(), &dag, &script).map_err(|mismatch| BenchError::OracleMismatch {
                repetition,
                mismatch,
            })?;
            instance.teardown()?;
        }
        let ((nodes, edges), live_after_build) = built.expect("at least one repetition");
        out.push(RunTraceWithShape {
            trace,
            nodes,
            edges,
            live_after_build,
        });
    }
    Ok(out)
}

/// A runtime's trace plus what its build looked like.
#[derive(Clone, Debug)]
pub struct RunTraceWithShape {
    pub trace: RunTrace,
    pub nodes: usize,
    pub edges: usize,
    pub live_after_build: crate::LiveCounts,
}

/// Everything `cmd_run` does short of file IO.
pub fn run_benchmark(
    spec: &ScenarioSpec,
    runtimes: &[Runtime],
    repetitions: usize,
    weights: &[MetricSpec],
    bootstrap_iters: usize,
) -> Result<Report> {
    let mut runtimes = runtimes.to_vec();
    runtimes.sort();
    runtimes.dedup();
    let traces = collect_traces(spec, &runtimes, repetitions)?;
    let dag = generate(spec)?;
    report::assemble(spec, &dag, repetitions, &traces, weights, bootstrap_iters)
}

pub struct RunOutcome {
    pub report: Report,
    pub path: PathBuf,
}

/// Loads the scenario, runs it, and writes the report.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut spec = ScenarioSpec::load(&config.scenario)?;
    if let Some(seed) = config.seed {
        spec.seed = seed;
    }
    if let Some(reps) = config.repetitions {
        spec.repetitions = reps;
    }
    spec.validate()?;
    let weights = load_weights(config.weights.as_deref())?;
    let report = run_benchmark(&spec, &config.runtimes, spec.repetitions, &weights, config.bootstrap_iters)?;

    let path = config.output_path(&spec);
    let body = match config.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(&path, body).map_err(|source| BenchError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(RunOutcome { report, path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Topology;

    fn chain3(script_len: usize) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(Topology::Chain, 3).with_script((0..script_len).map(|i| (0, i as i64 + 1)).collect());
        spec.repetitions = 1;
        spec
    }

    #[test]
    fn chain_head_updates_count_derived_refreshes() {
        let report = run_benchmark(&chain3(4), &[Runtime::Signals], 1, &load_weights(None).unwrap(), 50).unwrap();
        let signals = &report.runtimes["signals"];
        assert!(signals.oracle_match);
        // two computeds below the head, refreshed once per update
        assert_eq!(signals.totals["recomputations"], 4 * 2);
        assert_eq!(signals.totals["notifications"], 4);
        assert!(report.pairwise.is_empty());
    }

    #[test]
    fn all_runtimes_produce_pairwise_entries() {
        let mut spec = ScenarioSpec::diamond_ladder(3).with_script(vec![(0, 1), (0, 2)]);
        spec.repetitions = 3;
        let report = run_benchmark(&spec, &Runtime::ALL, 3, &load_weights(None).unwrap(), 50).unwrap();
        let pairs: std::collections::BTreeSet<_> = report.pairwise.iter().map(|e| (e.a.clone(), e.b.clone())).collect();
        assert_eq!(pairs.len(), 3);
        assert_eq!(report.pairwise.len(), 3 * COUNTER_METRICS.len());
        assert_eq!(report.timing.pairwise.len(), 3);
        assert!(report.composite.budget.is_some());
        assert!(report.object_ratios["store/signals"] > 1.0);
    }

    #[test]
    fn empty_scripts_and_selections_are_rejected() {
        let spec = chain3(0);
        assert!(matches!(
            run_benchmark(&spec, &[Runtime::Signals], 1, &[], 10),
            Err(BenchError::Config(_))
        ));
        let mut config = RunConfig::new("x.json");
        config.runtimes.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn weights_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        std::fs::write(&path, r#"{"recomputations": {"baseline": 2.0, "weight": 4.0}}"#).unwrap();
        let specs = load_weights(Some(&path)).unwrap();
        assert_eq!(specs[0], MetricSpec::new("recomputations", 2.0, 4.0));
        assert_eq!(specs[1], MetricSpec::new("notifications", 0.0, 1.0));
        std::fs::write(&path, r#"{"latency": {"weight": 1.0}}"#).unwrap();
        assert!(matches!(load_weights(Some(&path)), Err(BenchError::Config(_))));
        std::fs::write(&path, r#"{"recomputations": {"wieght": 1.0}}"#).unwrap();
        assert!(matches!(load_weights(Some(&path)), Err(BenchError::Json { .. })));
    }

    #[test]
    fn cmd_run_writes_to_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("s.json");
        std::fs::write(&scenario, serde_json::to_string(&chain3(2)).unwrap()).unwrap();
        let mut config = RunConfig::new(&scenario);
        config.format = Format::Csv;
        config.out = Some(dir.path().join("nested/out.csv"));
        config.bootstrap_iters = 20;
        let outcome = cmd_run(&config).unwrap();
        let text = std::fs::read_to_string(&outcome.path).unwrap();
        assert!(text.starts_with("runtime,metric,mean,std,p50,p90,p99\n"));
        assert_eq!(text.lines().count(), 1 + 3 * (COUNTER_METRICS.len() + 1));
    }

    #[test]
    fn missing_scenario_file() {
        let err = cmd_run(&RunConfig::new("/nonexistent/scenario.json")).err().unwrap();
        assert!(matches!(err, BenchError::Scenario(ScenarioError::Io(_))));
    }
}
