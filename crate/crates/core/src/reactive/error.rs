use thiserror::Error;

use super::{NodeId, ScopeId};

/// Errors raised by the signal runtime.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReactiveError {
    #[error("scope {0:?} has been disposed")]
    DisposedScope(ScopeId),
    #[error("node {0:?} does not exist or was disposed")]
    DanglingHandle(NodeId),
    #[error("node {0:?} is not a source signal and cannot be written")]
    NotASource(NodeId),
    #[error("node {0:?} is an effect and has no readable value")]
    NotReadable(NodeId),
    #[error("write to {target:?} while evaluating computed {computing:?}")]
    WriteDuringCompute { target: NodeId, computing: NodeId },
    #[error("graph mutation while evaluating computed {computing:?}")]
    MutationDuringCompute { computing: NodeId },
    #[error("dependency cycle: {}", format_path(path))]
    Cycle { path: Vec<NodeId> },
    #[error("effects did not converge after {iterations} propagation passes")]
    NonConvergence { iterations: usize },
    #[error("callback failed: {0}")]
    Callback(String),
}

fn format_path(path: &[NodeId]) -> String {
    path.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}
