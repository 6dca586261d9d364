//! Scenario workloads: one logical dataflow DAG realized on every runtime.
//!
//! Node `i` of a [`Dag`] computes the wrapping sum of its parents plus a
//! per-node constant. Sources hold a raw value; their node value is the raw
//! value plus their constant (generated constants for sources are zero).
//! Updates in a script address sources by their position in
//! [`Dag::sources`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod build;
mod dag;
mod oracle;

pub use build::{
    build, build_signals_on, run_script, verify, ObservablesInstance, OracleMismatch, ScenarioInstance, SignalsInstance,
    StoreInstance, WorkCounters,
};
pub use dag::{burst_script, generate, random_script, Dag, GraphShape, BURST_LEN};
pub use oracle::{final_sources, oracle, oracle_values, OracleResult};

use crate::baseline::{ObservableError, StoreError};
use crate::reactive::ReactiveError;
use crate::LiveCounts;

pub const DEFAULT_REPETITIONS: usize = 30;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("script update {update} addresses source {index}, but there are {sources} sources")]
    ScriptIndex {
        update: usize,
        index: usize,
        sources: usize,
    },
    #[error(transparent)]
    Signals(#[from] ReactiveError),
    #[error(transparent)]
    Observables(#[from] ObservableError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Chain,
    FanOut,
    DiamondLadder,
    RandomDag,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Chain => "chain",
            Topology::FanOut => "fan_out",
            Topology::DiamondLadder => "diamond_ladder",
            Topology::RandomDag => "random_dag",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Runtime {
    Signals,
    Observables,
    Store,
}

impl Runtime {
    pub const ALL: [Runtime; 3] = [Runtime::Signals, Runtime::Observables, Runtime::Store];

    pub fn as_str(self) -> &'static str {
        match self {
            Runtime::Signals => "signals",
            Runtime::Observables => "observables",
            Runtime::Store => "store",
        }
    }
}

impl fmt::Display for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Runtime {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self> {
        Runtime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ScenarioError::InvalidParameter(format!("unknown runtime {s:?}")))
    }
}

/// A scenario file.
///
/// `n` is ignored by `diamond_ladder`, `d` by every other topology.
/// `constants`, when present, overrides the seeded per-node constants.
/// `burst` appends that many seeded updates after `script`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub topology: Topology,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub script: Vec<(usize, i64)>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst: Option<usize>,
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

impl ScenarioSpec {
    pub fn new(topology: Topology, n: usize) -> Self {
        ScenarioSpec {
            topology,
            n,
            d: 0,
            seed: 0,
            script: Vec::new(),
            repetitions: DEFAULT_REPETITIONS,
            constants: None,
            burst: None,
        }
    }

    pub fn diamond_ladder(d: usize) -> Self {
        ScenarioSpec {
            d,
            ..Self::new(Topology::DiamondLadder, 0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_script(mut self, script: Vec<(usize, i64)>) -> Self {
        self.script = script;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks topology parameters and repetitions; script indices are
    /// checked against the generated DAG by [`ScenarioSpec::full_script`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ScenarioError::InvalidParameter(msg));
        match self.topology {
            Topology::DiamondLadder if self.d < 1 => return bad(format!("diamond_ladder needs d >= 1, got {}", self.d)),
            Topology::DiamondLadder => {}
            _ if self.n < 1 => return bad(format!("{} needs n >= 1, got {}", self.topology, self.n)),
            _ => {}
        }
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        Ok(())
    }

    /// Stable identifier of the workload, independent of repetitions.
    pub fn id(&self) -> String {
        let size = match self.topology {
            Topology::DiamondLadder => format!("d{}", self.d),
            _ => format!("n{}", self.n),
        };
        let updates = self.script.len() + self.burst.unwrap_or(0);
        format!("{}-{}-seed{}-u{}", self.topology, size, self.seed, updates)
    }

    /// The explicit script followed by any seeded burst, validated against `dag`.
    pub fn full_script(&self, dag: &Dag) -> Result<Vec<(usize, i64)>> {
        let mut script = self.script.clone();
        if let Some(len) = self.burst {
            script.extend(random_script(dag, self.seed ^ 0x5eed_b0b5, len));
        }
        for (update, &(index, _)) in script.iter().enumerate() {
            if index >= dag.sources.len() {
                return Err(ScenarioError::ScriptIndex {
                    update,
                    index,
                    sources: dag.sources.len(),
                });
            }
        }
        Ok(script)
    }
}

/// Measurements for one update of one repetition.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Sample {
    pub repetition: usize,
    pub update_index: usize,
    /// Node refreshes attributed to this update.
    pub recomputations: u64,
    pub notifications: u64,
    pub elapsed_s: f64,
    pub live: LiveCounts,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RunTrace {
    pub runtime: Runtime,
    pub spec_id: String,
    pub samples: Vec<Sample>,
}

impl RunTrace {
    pub fn new(runtime: Runtime, spec_id: impl Into<String>) -> Self {
        RunTrace {
            runtime,
            spec_id: spec_id.into(),
            samples: Vec::new(),
        }
    }

    pub fn recomputations(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.recomputations).collect()
    }

    pub fn total_recomputations(&self) -> u64 {
        self.samples.iter().map(|s| s.recomputations).sum()
    }

    pub fn total_notifications(&self) -> u64 {
        self.samples.iter().map(|s| s.notifications).sum()
    }

    pub fn total_elapsed_s(&self) -> f64 {
        self.samples.iter().map(|s| s.elapsed_s).sum()
    }
}
