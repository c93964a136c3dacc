//! Domain-stratified nonparametric bootstrap with percentile intervals.
//!
//! Replicate `r` draws its resample from stream `split(seed, r)`, so the
//! replicate set is identical for any thread count or scheduling order.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PooledDataset;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Statistic on the original data.
    pub point: f64,
    /// Successful replicate values, ascending.
    pub replicates: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn length(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Resamples `n1` source and `n0` target indices with replacement, independently per domain.
pub fn resample_indices(n1: usize, n0: usize, key: StreamKey) -> (Vec<usize>, Vec<usize>) {
    let mut rng = key.rng();
    let source = (0..n1).map(|_| rng.random_range(0..n1)).collect();
    let target = (0..n0).map(|_| rng.random_range(0..n0)).collect();
    (source, target)
}

/// 1-based order statistics `(ceil(m (1 - level) / 2), ceil(m (1 + level) / 2))`,
/// clamped to `[1, m]`.
pub fn percentile_ranks(m: usize, level: f64) -> (usize, usize) {
    // absorb representation error in products such as 1000 * 0.05 / 2
    let rank = |x: f64| ((x - 1e-9).ceil().max(1.0) as usize).min(m);
    (
        rank(m as f64 * (1.0 - level) / 2.0),
        rank(m as f64 * (1.0 + level) / 2.0),
    )
}

fn check_args(replicates: usize, level: f64) -> Result<()> {
    if replicates < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bootstrap replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Evaluates `statistic` on `replicates` stratified resamples in parallel.
/// Results are returned in replicate order.
pub fn bootstrap_replicates<T, E, F>(
    n1: usize,
    n0: usize,
    replicates: usize,
    seed: u64,
    statistic: F,
) -> Vec<std::result::Result<T, E>>
where
    T: Send,
    E: Send,
    F: Fn(&[usize], &[usize]) -> std::result::Result<T, E> + Sync,
{
    let root = StreamKey::new(seed);
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let (s, t) = resample_indices(n1, n0, root.split(r as u64));
            statistic(&s, &t)
        })
        .collect()
}

/// Percentile interval from replicate values; non-finite values count as failures.
pub fn summarize(
    point: f64,
    values: impl IntoIterator<Item = Option<f64>>,
    level: f64,
) -> Result<BootstrapResult> {
    let mut failures = 0;
    let mut replicates = Vec::new();
    let mut total = 0;
    for v in values {
        total += 1;
        match v {
            Some(x) if x.is_finite() => replicates.push(x),
            _ => failures += 1,
        }
    }
    if failures * 10 > total || replicates.is_empty() {
        return Err(Error::TooManyFailures { failures, total });
    }
    replicates.sort_by(f64::total_cmp);
    let (lo, hi) = percentile_ranks(replicates.len(), level);
    Ok(BootstrapResult {
        point,
        ci_low: replicates[lo - 1],
        ci_high: replicates[hi - 1],
        replicates,
        level,
        failures,
    })
}

/// Percentile bootstrap interval for a scalar statistic of the pooled data.
/// Replicates whose statistic errors are dropped and counted as failures.
pub fn bootstrap_ci<F>(
    data: &PooledDataset,
    statistic: F,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&PooledDataset) -> Result<f64> + Sync,
{
    let mut out = bootstrap_ci_multi(
        data,
        |d| statistic(d).map(|v| vec![v]),
        1,
        replicates,
        level,
        seed,
    )?;
    Ok(out.remove(0))
}

/// Percentile intervals for a vector-valued statistic of length `k`, sharing resamples.
pub fn bootstrap_ci_multi<F>(
    data: &PooledDataset,
    statistic: F,
    k: usize,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&PooledDataset) -> Result<Vec<f64>> + Sync,
{
    check_args(replicates, level)?;
    let point = statistic(data)?;
    if point.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "statistic returned {} values, expected {k}",
            point.len()
        )));
    }
    let reps = bootstrap_replicates(data.n1(), data.n0(), replicates, seed, |s, t| {
        statistic(&data.resample(s, t))
    });
    (0..k)
        .map(|j| {
            summarize(
                point[j],
                reps.iter().map(|r| r.as_ref().ok().and_then(|v| v.get(j).copied())),
                level,
            )
        })
        .collect()
}
