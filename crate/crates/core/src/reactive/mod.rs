//! Fine-grained signal runtime.
//!
//! State originates in source signals, derived values live in computeds, and
//! side effects are confined to effects. Propagation is push-based: a write
//! dirties direct subscribers, and stabilization drains the dirty set in
//! ascending topological rank. A computed whose recomputed value is equal to
//! the previous one does not dirty its subscribers (the equality cut).
//!
//! Every node belongs to a [`ScopeId`]; disposing a scope removes its nodes,
//! their edges and all child scopes. There are no explicit subscriptions to
//! tear down, so [`LiveCounts::retained_subscriptions`] is always zero here.

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

mod equality;
mod error;
mod graph;


pub use equality::Equality;
pub use error::ReactiveError;
pub use graph::{ReactiveGraph, Result, DEFAULT_PASS_LIMIT};

/// Handle to a node. Dense, allocated in creation order, never reused.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ScopeId(pub(crate) u32);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Source,
    Computed,
    Effect,
}

/// Snapshot of live runtime objects, used as a leak and memory proxy.
///
/// Shared by all three runtimes: nodes are signals/computeds/effects,
/// subjects, or selectors; edges are dependency links.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct LiveCounts {
    pub live_nodes: usize,
    pub live_edges: usize,
    pub live_effects: usize,
    pub retained_subscriptions: usize,
}

impl LiveCounts {
    /// Nodes + edges + subscriptions.
    pub fn total_objects(&self) -> usize {
        self.live_nodes + self.live_edges + self.retained_subscriptions
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct StabilizationStats {
    pub recomputations: u64,
    pub equality_cuts: u64,
    pub effects_run: u64,
}

impl AddAssign for StabilizationStats {
    fn add_assign(&mut self, rhs: Self) {
        self.recomputations += rhs.recomputations;
        self.equality_cuts += rhs.equality_cuts;
        self.effects_run += rhs.effects_run;
    }
}

/// Cumulative instrumentation counters of a graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Counters {
    /// Committed computed evaluations, including the eager first one.
    pub recomputations: u64,
    pub equality_cuts: u64,
    pub effects_run: u64,
    pub writes: u64,
    /// Writes dropped because the new value equalled the old one.
    pub unchanged_writes: u64,
    /// Stabilizations that had work to do.
    pub stabilizations: u64,
    /// Evaluations discarded because a newly read dependency forced a rank raise.
    pub deferred_evaluations: u64,
}

/// One committed evaluation, recorded when tracing is on.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Evaluation {
    pub node: NodeId,
    pub kind: NodeKind,
    pub rank: u32,
    /// Serial of the enclosing stabilization; 0 for evaluations at creation.
    pub stabilization: u64,
    /// Dependencies read, with the version observed.
    pub reads: Vec<(NodeId, u64)>,
}
