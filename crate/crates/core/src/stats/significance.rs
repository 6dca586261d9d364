use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_sample, quantile, Result, StatsError};

pub const DEFAULT_BOOTSTRAP_ITERS: usize = 10_000;
pub const BOOTSTRAP_CONFIDENCE: f64 = 0.95;

/// Two-tailed rank-sum result.
///
/// `r / n` is the fraction of (x, y) pairs in which x ranks above y (ties
/// count half), with `n` the pooled sample size; `p = 2·min(r/n, 1 − r/n)`.
/// `p_normal` is the classical normal-approximation p-value of the same
/// statistic, with tie and continuity correction.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct RankSum {
    /// Sum of the midranks of x in the pooled ranking.
    pub w: f64,
    /// Mann-Whitney U of x.
    pub u: f64,
    pub r: f64,
    pub n: usize,
    pub p: f64,
    pub p_normal: f64,
}

/// Midranks of `pooled` (1-based, ties share their average rank) and the
/// tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

pub fn rank_sum_p(x: &[f64], y: &[f64]) -> Result<RankSum> {
    check_sample(x, "x")?;
    check_sample(y, "y")?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..x.len()].iter().sum();
    let u = w - nx * (nx + 1.0) / 2.0;
    let ratio = u / (nx * ny);
    let p = (2.0 * ratio.min(1.0 - ratio)).clamp(0.0, 1.0);

    let big_n = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>();
    let var = if n > 1 {
        nx * ny / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)))
    } else {
        0.0
    };
    let p_normal = if var > 0.0 {
        let z = ((u - nx * ny / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RankSum {
        w,
        u,
        r: big_n * ratio,
        n,
        p,
        p_normal,
    })
}

/// `(#{x_i > y_j} − #{x_i < y_j}) / (|x|·|y|)`.
pub fn cliffs_d(x: &[f64], y: &[f64]) -> Result<f64> {
    check_sample(x, "x")?;
    check_sample(y, "y")?;
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let mut balance: i64 = 0;
    for &xi in x {
        let below = ys.partition_point(|&v| v < xi);
        let not_above = ys.partition_point(|&v| v <= xi);
        balance += below as i64 - (ys.len() - not_above) as i64;
    }
    Ok(balance as f64 / (x.len() * y.len()) as f64)
}

/// Percentile bootstrap interval of `statistic(x, y)`, resampling each
/// sample independently with replacement.
pub fn bootstrap_ci(
    statistic: impl Fn(&[f64], &[f64]) -> f64,
    x: &[f64],
    y: &[f64],
    iters: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_sample(x, "x")?;
    check_sample(y, "y")?;
    if iters == 0 {
        return Err(StatsError::ZeroIterations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bx = vec![0.0; x.len()];
    let mut by = vec![0.0; y.len()];
    let mut dist = Vec::with_capacity(iters);
    for _ in 0..iters {
        for slot in bx.iter_mut() {
            *slot = x[rng.gen_range(0..x.len())];
        }
        for slot in by.iter_mut() {
            *slot = y[rng.gen_range(0..y.len())];
        }
        dist.push(statistic(&bx, &by));
    }
    if dist.iter().any(|v| v.is_nan()) {
        return Err(StatsError::NonFinite("bootstrap statistic"));
    }
    dist.sort_by(f64::total_cmp);
    let alpha = 1.0 - BOOTSTRAP_CONFIDENCE;
    Ok((quantile(&dist, alpha / 2.0), quantile(&dist, 1.0 - alpha / 2.0)))
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidProbability(bad));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        running = running.min(pvals[i] * (m as f64 / (pos + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}
