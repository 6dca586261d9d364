use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::scenario::{GraphShape, RunTrace};
use crate::LiveCounts;

/// Weights of the signal, store and observable scores in the budget.
pub const BUDGET_WEIGHTS: [f64; 3] = [1.2, 0.8, 0.5];

/// A measured metric's baseline `B` and importance weight `I`.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub baseline: f64,
    pub weight: f64,
}

impl MetricSpec {
    pub fn new(name: impl Into<String>, baseline: f64, weight: f64) -> Self {
        MetricSpec {
            name: name.into(),
            baseline,
            weight,
        }
    }
}

/// `(1/n)·Σ((M_i − B_i)/I_i)·100`.
pub fn perf_score(measurements: &[(f64, MetricSpec)]) -> Result<f64> {
    if measurements.is_empty() {
        return Err(StatsError::Empty("measurements"));
    }
    let mut total = 0.0;
    for (m, spec) in measurements {
        if !(spec.weight > 0.0) {
            return Err(StatsError::NonPositiveWeight {
                name: spec.name.clone(),
                weight: spec.weight,
            });
        }
        total += (m - spec.baseline) / spec.weight;
    }
    Ok(total / measurements.len() as f64 * 100.0)
}

/// `T = P·D/C`.
pub fn tradeoff_score(p: f64, d: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(StatsError::NonPositiveCost(c));
    }
    Ok(p * d / c)
}

/// `B = 1.2·S_signals + 0.8·S_store + 0.5·S_observables`.
pub fn budget_score(s_signals: f64, s_store: f64, s_observables: f64) -> Result<f64> {
    let scores = [s_signals, s_store, s_observables];
    if scores.iter().any(|s| !(*s >= 0.0)) {
        return Err(StatsError::NegativeScore);
    }
    Ok(scores.iter().zip(BUDGET_WEIGHTS).map(|(s, w)| s * w).sum())
}

/// Least-squares slope of `ln(count)` against `ln(size)`.
pub fn scaling_fit(sizes: &[f64], counts: &[f64]) -> Result<f64> {
    if sizes.len() != counts.len() {
        return Err(StatsError::Degenerate(format!(
            "{} sizes but {} counts",
            sizes.len(),
            counts.len()
        )));
    }
    if sizes.len() < 3 {
        return Err(StatsError::Degenerate(format!("need at least 3 points, got {}", sizes.len())));
    }
    if sizes.iter().chain(counts).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(StatsError::Degenerate("sizes and counts must be positive and finite".into()));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Degenerate("all sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Ratio of total live objects, `a` over `b`.
pub fn object_ratio(a: LiveCounts, b: LiveCounts) -> Result<f64> {
    let denom = b.total_objects();
    if denom == 0 {
        return Err(StatsError::DivisionByZero("reference object count"));
    }
    Ok(a.total_objects() as f64 / denom as f64)
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PropagationEfficiency {
    pub p_sig: f64,
    pub delta_sum: u64,
    pub tau_update_s: f64,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    /// `2kn/m`; absent for graphs without edges.
    pub bound: Option<f64>,
    pub within_bound: Option<bool>,
}

/// `P_sig = Σδ / τ` over a trace, with `τ` the total update time.
pub fn propagation_efficiency(trace: &RunTrace, shape: GraphShape) -> Result<PropagationEfficiency> {
    propagation_efficiency_from(&trace.recomputations(), trace.total_elapsed_s(), shape)
}

pub fn propagation_efficiency_from(deltas: &[u64], tau_s: f64, shape: GraphShape) -> Result<PropagationEfficiency> {
    if !(tau_s > 0.0) {
        return Err(StatsError::ZeroDuration(tau_s));
    }
    let delta_sum: u64 = deltas.iter().sum();
    let p_sig = delta_sum as f64 / tau_s;
    let bound = (shape.m > 0).then(|| 2.0 * shape.k as f64 * shape.n as f64 / shape.m as f64);
    Ok(PropagationEfficiency {
        p_sig,
        delta_sum,
        tau_update_s: tau_s,
        k: shape.k,
        n: shape.n,
        m: shape.m,
        bound,
        within_bound: bound.map(|b| p_sig <= b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(name: &str) -> MetricSpec {
        MetricSpec::new(name, 0.0, 1.0)
    }

    #[test]
    fn perf_score_examples() {
        let at_baseline = [(3.0, MetricSpec::new("a", 3.0, 2.0)), (5.0, MetricSpec::new("b", 5.0, 1.0))];
        assert_eq!(perf_score(&at_baseline).unwrap(), 0.0);
        assert_eq!(perf_score(&[(2.0, MetricSpec::new("a", 1.0, 1.0))]).unwrap(), 100.0);
        assert_eq!(perf_score(&[(0.5, unit("a")), (-0.5, unit("b"))]).unwrap(), 0.0);
        assert_eq!(perf_score(&[]), Err(StatsError::Empty("measurements")));
        assert!(matches!(
            perf_score(&[(1.0, MetricSpec::new("w", 0.0, 0.0))]),
            Err(StatsError::NonPositiveWeight { .. })
        ));
    }

    #[test]
    fn tradeoff_and_budget() {
        assert_eq!(tradeoff_score(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(tradeoff_score(1.0, 1.0, 0.0), Err(StatsError::NonPositiveCost(0.0)));
        assert!(tradeoff_score(1.0, 1.0, -2.0).is_err());
        assert_eq!(budget_score(1.0, 1.0, 1.0).unwrap(), 2.5);
        assert_eq!(budget_score(1.0, -1.0, 1.0), Err(StatsError::NegativeScore));
    }

    #[test]
    fn scaling_examples() {
        let sizes = [8.0, 16.0, 32.0, 64.0];
        assert!((scaling_fit(&sizes, &sizes).unwrap() - 1.0).abs() < 0.01);
        let sq: Vec<f64> = sizes.iter().map(|s| s * s).collect();
        assert!((scaling_fit(&sizes, &sq).unwrap() - 2.0).abs() < 0.01);
        assert!(scaling_fit(&sizes[..2], &sizes[..2]).is_err());
        assert!(scaling_fit(&[1.0, 2.0, 0.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(scaling_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn object_ratio_examples() {
        let b = LiveCounts {
            live_nodes: 3,
            live_edges: 4,
            live_effects: 1,
            retained_subscriptions: 2,
        };
        let a = LiveCounts {
            live_nodes: 6,
            live_edges: 8,
            live_effects: 2,
            retained_subscriptions: 4,
        };
        assert_eq!(object_ratio(b, b).unwrap(), 1.0);
        assert_eq!(object_ratio(a, b).unwrap(), 2.0);
        assert!(object_ratio(a, LiveCounts::default()).is_err());
    }

    #[test]
    fn propagation_examples() {
        let shape = GraphShape { k: 2, n: 4, m: 4 };
        let pe = propagation_efficiency_from(&[2, 3], 1.0, shape).unwrap();
        assert_eq!(pe.p_sig, 5.0);
        assert_eq!(pe.bound, Some(4.0));
        assert_eq!(pe.within_bound, Some(false));
        assert_eq!(propagation_efficiency_from(&[0, 0], 0.5, shape).unwrap().p_sig, 0.0);
        assert_eq!(
            propagation_efficiency_from(&[1], 0.0, shape),
            Err(StatsError::ZeroDuration(0.0))
        );
        let lone = propagation_efficiency_from(&[0], 1.0, GraphShape { k: 0, n: 1, m: 0 }).unwrap();
        assert_eq!(lone.bound, None);
    }

    proptest! {
        #[test]
        fn perf_score_is_affine(ms in prop::collection::vec((-100.0f64..100.0, -10.0f64..10.0, 0.1f64..10.0), 1..8),
                                 idx in any::<prop::sample::Index>(), bump in -50.0f64..50.0) {
            let specs: Vec<(f64, MetricSpec)> = ms.iter().enumerate()
                .map(|(i, &(m, b, w))| (m, MetricSpec::new(format!("m{i}"), b, w)))
                .collect();
            let i = idx.index(specs.len());
            let mut moved = specs.clone();
            moved[i].0 += bump;
            let slope = 100.0 / (specs.len() as f64 * specs[i].1.weight);
            let diff = perf_score(&moved).unwrap() - perf_score(&specs).unwrap();
            prop_assert!((diff - slope * bump).abs() < 1e-6 * (1.0 + diff.abs()));
        }

        #[test]
        fn scaling_fit_recovers_power_laws(exp in 0.2f64..3.0, scale in 0.5f64..50.0) {
            let sizes = [8.0, 16.0, 32.0, 64.0, 128.0];
            let counts: Vec<f64> = sizes.iter().map(|s: &f64| scale * s.powf(exp)).collect();
            let fit = scaling_fit(&sizes, &counts).unwrap();
            prop_assert!((fit - exp).abs() <= 0.01 * exp);
        }
    }
}
