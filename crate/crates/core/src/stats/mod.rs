//! Descriptive statistics, significance testing and composite scores over
//! run traces.

use thiserror::Error;

mod descriptive;
mod scores;
mod significance;

pub use descriptive::{quantile, Summary};
pub use scores::{
    budget_score, object_ratio, perf_score, propagation_efficiency, propagation_efficiency_from, scaling_fit,
    tradeoff_score, MetricSpec, PropagationEfficiency, BUDGET_WEIGHTS,
};
pub use significance::{
    bh_adjust, bootstrap_ci, cliffs_d, rank_sum_p, RankSum, BOOTSTRAP_CONFIDENCE, DEFAULT_BOOTSTRAP_ITERS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("importance weight of {name:?} must be positive, got {weight}")]
    NonPositiveWeight { name: String, weight: f64 },
    #[error("update duration must be positive, got {0} s")]
    ZeroDuration(f64),
    #[error("cost must be positive, got {0}")]
    NonPositiveCost(f64),
    #[error("scores must be non-negative")]
    NegativeScore,
    #[error("p-value {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("bootstrap needs at least one iteration")]
    ZeroIterations,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_sample(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.is_empty() {
        return Err(StatsError::Empty(what));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(what));
    }
    Ok(())
}
