//! Second estimation step: the tilt parameters maximize the conditional
//! likelihood of the domain indicators given the pooled covariates, with the
//! outcome model held at its fitted value.
//!
//! With `w(x) = exp(alpha0 + beta0'x1) (1 - g(x)) + exp(alpha1 + beta1'x1) g(x)`
//! the objective is
//!
//! ```text
//! sum_{target} ln w(x_j) - sum_{pooled} ln(n1 + n0 w(x_i))
//! ```
//!
//! Sums are accumulated exactly (see [`ExactSum`]) so the objective and its
//! gradient do not depend on sample order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    clipped_pair, log_add_exp, sigmoid, OutcomeModelParams, PooledDataset, TiltParams, PROB_EPS,
};
use crate::numeric::{CompensatedSum, ExactSum, Summation};
use crate::rng::StreamKey;

/// Exponents beyond this magnitude switch the weight evaluation to log space.
const LINEAR_DOMAIN_LIMIT: f64 = 300.0;

/// Precomputed pooled sample for repeated objective evaluations at fixed `xi`.
#[derive(Debug, Clone)]
pub struct TiltObjective {
    d: usize,
    n1: usize,
    n0: usize,
    /// Pooled x1 rows, source first.
    x1: Vec<f64>,
    /// Index of each point's x1 row among the distinct rows in `levels`.
    group: Vec<usize>,
    levels: Vec<f64>,
    g: Vec<f64>,
    gc: Vec<f64>,
}

impl TiltObjective {
    pub fn new(data: &PooledDataset, xi: &OutcomeModelParams) -> Result<Self> {
        let d = data.d();
        if xi.xi1.len() != d + data.q() {
            return Err(Error::DimensionMismatch(format!(
                "outcome model has {} slopes, data has d + q = {}",
                xi.xi1.len(),
                d + data.q()
            )));
        }
        let n = data.n1() + data.n0();
        let mut x1 = Vec::with_capacity(n * d);
        let mut g = Vec::with_capacity(n);
        let mut gc = Vec::with_capacity(n);
        let mut group = Vec::with_capacity(n);
        let mut levels = Vec::new();
        let mut seen = std::collections::HashMap::new();
        for row in data.pooled_rows() {
            x1.extend_from_slice(row.x1);
            let key: Vec<u64> = row.x1.iter().map(|v| v.to_bits()).collect();
            let next = seen.len();
            let id = *seen.entry(key).or_insert_with(|| {
                levels.extend_from_slice(row.x1);
                next
            });
            group.push(id);
            let (p, pc) = clipped_pair(xi.linear_predictor(row));
            g.push(p);
            gc.push(pc);
        }
        Ok(Self {
            d,
            n1: data.n1(),
            n0: data.n0(),
            x1,
            group,
            levels,
            g,
            gc,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.d + 2
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "tilt vector has length {}, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `(a0, a1, exp(a0), exp(a1))` for each distinct x1 row, where `a_y = alpha_y + beta_y'x1`.
    fn exponents(&self, theta: &[f64]) -> Vec<[f64; 4]> {
        let d = self.d;
        self.levels
            .chunks_exact(d)
            .map(|x1| {
                let a0 = theta[0] + dot(&theta[1..=d], x1);
                let a1 = theta[d + 1] + dot(&theta[d + 2..], x1);
                [a0, a1, a0.exp(), a1.exp()]
            })
            .collect()
    }

    /// Per-point `(ln w, w0/w, w1/w, n0 w / (n1 + n0 w), ln(n1 + n0 w))`.
    #[inline]
    fn point(&self, i: usize, exps: &[[f64; 4]]) -> (f64, f64, f64, f64, f64) {
        let [a0, a1, e0, e1] = exps[self.group[i]];
        let (n1, n0) = (self.n1 as f64, self.n0 as f64);
        if a0.abs() < LINEAR_DOMAIN_LIMIT && a1.abs() < LINEAR_DOMAIN_LIMIT {
            let w0 = e0 * self.gc[i];
            let w1 = e1 * self.g[i];
            let w = w0 + w1;
            let denom = n1 + n0 * w;
            (w.ln(), w0 / w, w1 / w, n0 * w / denom, denom.ln())
        } else {
            let lw0 = a0 + self.gc[i].ln();
            let lw1 = a1 + self.g[i].ln();
            let lw = log_add_exp(lw0, lw1);
            let ld = log_add_exp(n1.ln(), n0.ln() + lw);
            (
                lw,
                (lw0 - lw).exp(),
                (lw1 - lw).exp(),
                (n0.ln() + lw - ld).exp(),
                ld,
            )
        }
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let exps = self.exponents(theta);
        let mut target = ExactSum::new();
        let mut pooled = ExactSum::new();
        for i in 0..self.g.len() {
            let (lw, _, _, _, ld) = self.point(i, &exps);
            if i >= self.n1 {
                target.add(lw);
            }
            pooled.add(ld);
        }
        finite(target.value() - pooled.value())
    }

    /// Objective and gradient in `(alpha0, beta0, alpha1, beta1)` order.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        self.accumulate_all::<ExactSum>(theta)
    }

    /// Compensated-sum version of [`Self::value_and_gradient`] for the optimizer's inner loop.
    fn value_and_gradient_fast(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.accumulate_all::<CompensatedSum>(theta)
    }

    fn accumulate_all<S: Summation + Clone>(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d;
        let k = self.dim();
        let mut target = S::default();
        let mut pooled = S::default();
        // target and pooled parts are kept apart and differenced once at the end
        let mut gt = vec![S::default(); k];
        let mut gp = vec![S::default(); k];
        let exps = self.exponents(theta);
        for i in 0..self.g.len() {
            let (lw, p0, p1, s, ld) = self.point(i, &exps);
            let x1 = &self.x1[i * d..(i + 1) * d];
            pooled.add(ld);
            accumulate(&mut gp, x1, s * p0, s * p1);
            if i >= self.n1 {
                target.add(lw);
                accumulate(&mut gt, x1, p0, p1);
            }
        }
        let value = finite(target.value() - pooled.value())?;
        let grad = gt
            .iter()
            .zip(&gp)
            .map(|(t, p)| finite(t.value() - p.value()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((value, grad))
    }
}

fn accumulate<S: Summation>(sums: &mut [S], x1: &[f64], c0: f64, c1: f64) {
    let d = x1.len();
    sums[0].add(c0);
    sums[d + 1].add(c1);
    for (j, &v) in x1.iter().enumerate() {
        sums[1 + j].add(c0 * v);
        sums[d + 2 + j].add(c1 * v);
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericRange(
            "conditional log-likelihood is not finite".into(),
        ))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Conditional log-likelihood of the domain indicators.
pub fn conditional_loglik(
    theta: &TiltParams,
    data: &PooledDataset,
    xi: &OutcomeModelParams,
) -> Result<f64> {
    TiltObjective::new(data, xi)?.value(&theta.to_vec())
}

/// Analytic gradient of [`conditional_loglik`], ordered `(alpha0, beta0, alpha1, beta1)`.
pub fn conditional_loglik_grad(
    theta: &TiltParams,
    data: &PooledDataset,
    xi: &OutcomeModelParams,
) -> Result<Vec<f64>> {
    Ok(TiltObjective::new(data, xi)?
        .value_and_gradient(&theta.to_vec())?
        .1)
}

#[derive(Debug, Clone)]
pub struct IdentificationOptions {
    /// Within-group variance of the fitted source posterior above which x2 counts as varying.
    pub variation_tol: f64,
    /// Round x1 entries to this grid before testing distinctness.
    pub snap: Option<f64>,
}

impl Default for IdentificationOptions {
    fn default() -> Self {
        Self {
            variation_tol: 1e-6,
            snap: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TiltOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial: Option<TiltParams>,
    /// Number of curvature pairs kept by the quasi-Newton update.
    pub memory: usize,
    /// Run [`check_identification`] and attach the report to the fit.
    pub diagnose: bool,
    pub identification: IdentificationOptions,
}

impl Default for TiltOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
            initial: None,
            memory: 10,
            diagnose: true,
            identification: IdentificationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltFit {
    pub theta: TiltParams,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub objective_value: f64,
    pub identification: Option<IdentificationReport>,
}

impl TiltFit {
    /// True when an attached identification report failed any check.
    pub fn identification_warning(&self) -> bool {
        self.identification.as_ref().is_some_and(|r| !r.passed())
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                what: "tilt estimation",
                iterations: self.iterations,
                gradient_norm: self.final_gradient_norm,
            })
        }
    }
}

/// Maximizes the conditional log-likelihood by limited-memory BFGS ascent with
/// Armijo backtracking. Non-convergence is reported through `converged`, with
/// the best iterate returned.
pub fn estimate_tilt(
    data: &PooledDataset,
    xi: &OutcomeModelParams,
    options: &TiltOptions,
) -> Result<TiltFit> {
    let objective = TiltObjective::new(data, xi)?;
    let start = match &options.initial {
        Some(t) if t.dim() != data.d() => {
            return Err(Error::DimensionMismatch(format!(
                "initial tilt has dimension {}, data has d = {}",
                t.dim(),
                data.d()
            )))
        }
        Some(t) => t.to_vec(),
        None => vec![0.0; objective.dim()],
    };
    let result = maximize(&objective, start, options)?;
    let identification = if options.diagnose {
        Some(check_identification(data, xi, &options.identification))
    } else {
        None
    };
    Ok(TiltFit {
        theta: TiltParams::from_slice(&result.x)?,
        converged: result.converged,
        iterations: result.iterations,
        final_gradient_norm: result.grad_norm,
        // the optimizer works with compensated sums; report the exact objective
        objective_value: objective.value(&result.x)?,
        identification,
    })
}

/// Runs [`estimate_tilt`] from the configured start plus `starts - 1` seeded
/// random starts and keeps the highest objective (converged fits preferred).
pub fn estimate_tilt_multistart(
    data: &PooledDataset,
    xi: &OutcomeModelParams,
    options: &TiltOptions,
    starts: usize,
    seed: u64,
) -> Result<TiltFit> {
    let mut best = estimate_tilt(data, xi, options)?;
    let mut rng = StreamKey::new(seed).rng();
    for _ in 1..starts {
        let init: Vec<f64> = (0..2 * data.d() + 2)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let opts = TiltOptions {
            initial: Some(TiltParams::from_slice(&init)?),
            diagnose: false,
            ..options.clone()
        };
        let fit = match estimate_tilt(data, xi, &opts) {
            Ok(f) => f,
            Err(Error::NumericRange(_)) => continue,
            Err(e) => return Err(e),
        };
        let better = match (fit.converged, best.converged) {
            (true, false) => true,
            (false, true) => false,
            _ => fit.objective_value > best.objective_value,
        };
        if better {
            best = TiltFit {
                identification: best.identification.take(),
                ..fit
            };
        }
    }
    Ok(best)
}

struct Maximum {
    x: Vec<f64>,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// L-BFGS on `-f`.
fn maximize(objective: &TiltObjective, start: Vec<f64>, options: &TiltOptions) -> Result<Maximum> {
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 60;

    let k = start.len();
    let mut x = start;
    let (f, g) = objective.value_and_gradient_fast(&x)?;
    // minimize F = -f
    let mut fx = -f;
    let mut gx: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> =
        std::collections::VecDeque::with_capacity(options.memory);
    let mut iterations = 0;

    loop {
        let gnorm = max_norm(&gx);
        if gnorm <= options.tolerance {
            return Ok(Maximum {
                x,
                grad_norm: gnorm,
                iterations,
                converged: true,
            });
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let mut dir = two_loop(&history, &gx);
        let mut slope = dot(&dir, &gx);
        if history.is_empty() || slope >= 0.0 {
            // steepest descent, normalized to unit length
            history.clear();
            let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir = gx.iter().map(|v| -v / norm).collect();
            slope = dot(&dir, &gx);
        }

        let slack = 1e-13 * fx.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            match objective.value_and_gradient_fast(&trial) {
                Ok((f_new, g_new)) => {
                    let f_new = -f_new;
                    let g_new: Vec<f64> = g_new.iter().map(|v| -v).collect();
                    let armijo = f_new <= fx + ARMIJO * t * slope;
                    // below the resolution of f, accept steps that shrink the gradient
                    let flat = f_new <= fx + slack && max_norm(&g_new) < gnorm;
                    if armijo || flat {
                        accepted = Some((trial, f_new, g_new));
                        break;
                    }
                }
                Err(Error::NumericRange(_)) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if sy > 1e-12 * scale {
            if history.len() == options.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }

    debug_assert_eq!(x.len(), k);
    Ok(Maximum {
        grad_norm: max_norm(&gx),
        x,
        iterations,
        converged: false,
    })
}

/// L-BFGS two-loop recursion: returns `-H g`.
fn two_loop(history: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Finite-sample diagnostics for the sufficient identification conditions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationReport {
    /// Rows `(1, t_k')` over distinct observed x1 values have rank `d + 1`.
    pub rank_ok: bool,
    pub distinct_x1_points: usize,
    /// At least `d + 1` x1-groups show variation of the fitted posterior in x2.
    pub instrument_ok: bool,
    /// The fitted posterior stays strictly inside `(EPS, 1 - EPS)` on the pooled sample.
    pub overlap_ok: bool,
    pub messages: Vec<String>,
}

impl IdentificationReport {
    pub fn passed(&self) -> bool {
        self.rank_ok && self.instrument_ok && self.overlap_ok
    }
}

#[derive(Default)]
struct GroupStats {
    count: usize,
    mean: f64,
    m2: f64,
}

pub fn check_identification(
    data: &PooledDataset,
    xi: &OutcomeModelParams,
    options: &IdentificationOptions,
) -> IdentificationReport {
    let d = data.d();
    let mut messages = Vec::new();
    if xi.xi1.len() != d + data.q() {
        messages.push(format!(
            "outcome model has {} slopes but the data have {} covariates",
            xi.xi1.len(),
            d + data.q()
        ));
        return IdentificationReport {
            rank_ok: false,
            distinct_x1_points: 0,
            instrument_ok: false,
            overlap_ok: false,
            messages,
        };
    }

    let key_of = |x1: &[f64]| -> Vec<u64> {
        x1.iter()
            .map(|&v| {
                let v = match options.snap {
                    Some(grid) if grid > 0.0 => (v / grid).round() * grid,
                    _ => v,
                };
                // +0.0 and -0.0 are the same group
                (v + 0.0).to_bits()
            })
            .collect()
    };

    let mut groups: BTreeMap<Vec<u64>, (Vec<f64>, GroupStats)> = BTreeMap::new();
    let mut g_min = f64::INFINITY;
    let mut g_max = f64::NEG_INFINITY;
    for row in data.pooled_rows() {
        let eta = xi.linear_predictor(row);
        let raw = sigmoid(eta);
        g_min = g_min.min(raw);
        g_max = g_max.max(raw);
        let g = clipped_pair(eta).0;
        let entry = groups.entry(key_of(row.x1)).or_insert_with(|| {
            (
                row.x1
                    .iter()
                    .map(|&v| match options.snap {
                        Some(grid) if grid > 0.0 => (v / grid).round() * grid,
                        _ => v,
                    })
                    .collect(),
                GroupStats::default(),
            )
        });
        let st = &mut entry.1;
        st.count += 1;
        let delta = g - st.mean;
        st.mean += delta / st.count as f64;
        st.m2 += delta * (g - st.mean);
    }

    let distinct = groups.len();
    let rank = affine_rank(groups.values().map(|(p, _)| p.as_slice()), d);
    let rank_ok = rank == d + 1;
    if !rank_ok {
        messages.push(format!(
            "rank condition fails: the {distinct} distinct x1 values span an affine space of dimension {}, need {d}",
            rank.saturating_sub(1)
        ));
    }

    let varying = groups
        .values()
        .filter(|(_, st)| st.count >= 2 && st.m2 / (st.count - 1) as f64 > options.variation_tol)
        .count();
    let instrument_ok = varying > d;
    if !instrument_ok {
        messages.push(format!(
            "instrument condition fails: the fitted source posterior varies with x2 in only {varying} of {distinct} x1-groups, need {}; check that x2 carries signal beyond x1",
            d + 1
        ));
    }
    messages.push(format!(
        "instrument check is a finite-sample proxy: within-group sample variance of the fitted posterior above {:e}",
        options.variation_tol
    ));

    let overlap_ok = g_min > PROB_EPS && g_max < 1.0 - PROB_EPS;
    if !overlap_ok {
        messages.push(format!(
            "overlap condition fails: fitted source posterior ranges over [{g_min:e}, {g_max}], touching the clipping bounds"
        ));
    }

    IdentificationReport {
        rank_ok,
        distinct_x1_points: distinct,
        instrument_ok,
        overlap_ok,
        messages,
    }
}

/// Rank of the matrix with rows `(1, t')` over the given points.
fn affine_rank<'a>(points: impl Iterator<Item = &'a [f64]>, d: usize) -> usize {
    let points: Vec<&[f64]> = points.collect();
    if points.is_empty() {
        return 0;
    }
    let n = points.len() as f64;
    let mut centre = vec![0.0; d];
    for p in &points {
        for (c, v) in centre.iter_mut().zip(p.iter()) {
            *c += v / n;
        }
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for p in &points {
        for a in 0..d {
            for b in 0..d {
                gram[(a, b)] += (p[a] - centre[a]) * (p[b] - centre[b]);
            }
        }
    }
    let eig = gram.symmetric_eigenvalues();
    let top = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |m, v| m.max(v * v));
    let cutoff = 1e-10 * top.max(scale * 1e-6);
    1 + eig.iter().filter(|&&v| v > cutoff && v > 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovariateMatrix, Covariates, LabeledData};
    use rand::Rng;

    fn dataset(source: &[(f64, f64, bool)], target: &[(f64, f64)]) -> PooledDataset {
        let mut sx = CovariateMatrix::new(1, 1).unwrap();
        for (a, b, _) in source {
            sx.push(Covariates { x1: &[*a], x2: &[*b] }).unwrap();
        }
        let mut tx = CovariateMatrix::new(1, 1).unwrap();
        for (a, b) in target {
            tx.push(Covariates { x1: &[*a], x2: &[*b] }).unwrap();
        }
        PooledDataset::new(
            LabeledData::new(sx, source.iter().map(|r| r.2).collect()).unwrap(),
            tx,
        )
        .unwrap()
    }

    fn random_dataset(rng: &mut impl Rng, n1: usize, n0: usize) -> PooledDataset {
        let src: Vec<(f64, f64, bool)> = (0..n1)
            .map(|_| {
                (
                    rng.random_range(0..2) as f64,
                    rng.random_range(-2.0..2.0),
                    rng.random_bool(0.5),
                )
            })
            .collect();
        let tgt: Vec<(f64, f64)> = (0..n0)
            .map(|_| (rng.random_range(0..2) as f64, rng.random_range(-2.0..2.0)))
            .collect();
        dataset(&src, &tgt)
    }

    #[test]
    fn zero_tilt_closed_form() {
        let data = dataset(&[(0.0, 1.0, true), (1.0, -1.0, false)], &[(0.0, 0.3), (1.0, 2.0)]);
        let xi = OutcomeModelParams::new(0.2, vec![0.5, -1.0]).unwrap();
        let v = conditional_loglik(&TiltParams::zeros(1), &data, &xi).unwrap();
        assert_eq!(v, -4.0 * 4f64.ln());
        assert!((v + 5.545_177_444_479_562).abs() < 1e-12);

        let mut rng = StreamKey::new(8).rng();
        let data = random_dataset(&mut rng, 37, 91);
        let v = conditional_loglik(&TiltParams::zeros(1), &data, &xi).unwrap();
        assert_eq!(v, -128.0 * 128f64.ln());
    }

    #[test]
    fn matches_naive_evaluation() {
        let mut rng = StreamKey::new(4).rng();
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 15, 25);
            let xi = OutcomeModelParams::new(
                rng.random_range(-1.0..1.0),
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            )
            .unwrap();
            let theta = TiltParams::from_slice(
                &(0..4).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(),
            )
            .unwrap();
            let (n1, n0) = (data.n1() as f64, data.n0() as f64);
            let mut naive = 0.0;
            for (i, row) in data.pooled_rows().enumerate() {
                let g = sigmoid(xi.linear_predictor(row));
                let w = (theta.alpha0 + theta.beta0[0] * row.x1[0]).exp() * (1.0 - g)
                    + (theta.alpha1 + theta.beta1[0] * row.x1[0]).exp() * g;
                if i >= data.n1() {
                    naive += w.ln();
                }
                naive -= (n1 + n0 * w).ln();
            }
            let v = conditional_loglik(&theta, &data, &xi).unwrap();
            assert!((v - naive).abs() < 1e-10, "{v} vs {naive}");
        }
    }

    #[test]
    fn gradient_at_zero_closed_form() {
        let mut rng = StreamKey::new(12).rng();
        let data = random_dataset(&mut rng, 40, 60);
        let xi = OutcomeModelParams::new(0.3, vec![-0.7, 1.2]).unwrap();
        let grad = conditional_loglik_grad(&TiltParams::zeros(1), &data, &xi).unwrap();
        let g = |row| clipped_pair(xi.linear_predictor(row)).0;
        let target: f64 = data.target().rows().map(g).sum();
        let pooled: f64 = data.pooled_rows().map(g).sum();
        let expected = target - 60.0 / 100.0 * pooled;
        assert!((grad[2] - expected).abs() < 1e-12);
    }

    #[test]
    fn duplicated_domain_is_stationary_at_zero() {
        let mut rng = StreamKey::new(2).rng();
        let src: Vec<(f64, f64, bool)> = (0..50)
            .map(|_| (rng.random_range(0..3) as f64, rng.random_range(-2.0..2.0), rng.random_bool(0.4)))
            .collect();
        let mut tgt: Vec<(f64, f64)> = src.iter().map(|r| (r.0, r.1)).collect();
        tgt.reverse();
        tgt.rotate_left(17);
        let data = dataset(&src, &tgt);
        let xi = OutcomeModelParams::new(0.4, vec![-0.3, 0.9]).unwrap();
        let grad = conditional_loglik_grad(&TiltParams::zeros(1), &data, &xi).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0), "{grad:?}");

        let fit = estimate_tilt(&data, &xi, &TiltOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.theta, TiltParams::zeros(1));
    }

    #[test]
    fn permutation_invariance_within_domains() {
        let mut rng = StreamKey::new(21).rng();
        let data = random_dataset(&mut rng, 30, 45);
        let xi = OutcomeModelParams::new(0.1, vec![0.6, -0.4]).unwrap();
        let theta = TiltParams::from_slice(&[0.4, -0.3, -0.2, 0.8]).unwrap();
        let mut sidx: Vec<usize> = (0..30).collect();
        let mut tidx: Vec<usize> = (0..45).collect();
        sidx.reverse();
        tidx.rotate_left(11);
        let perm = data.resample(&sidx, &tidx);
        let a = TiltObjective::new(&data, &xi).unwrap().value_and_gradient(&theta.to_vec()).unwrap();
        let b = TiltObjective::new(&perm, &xi).unwrap().value_and_gradient(&theta.to_vec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extreme_parameters_stay_finite() {
        let mut rng = StreamKey::new(5).rng();
        let data = random_dataset(&mut rng, 10, 10);
        let xi = OutcomeModelParams::new(0.1, vec![0.6, -0.4]).unwrap();
        let theta = TiltParams::from_slice(&[400.0, 300.0, -500.0, 2.0]).unwrap();
        let (v, g) = TiltObjective::new(&data, &xi).unwrap().value_and_gradient(&theta.to_vec()).unwrap();
        assert!(v.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn recovers_tilt_on_discrete_design() {
        // x1 in {0, 1}; x2 | (y, x1) ~ N(2y - 1, 1); source cells (y, x1) uniform
        let truth = [0.5f64, -1.0, -0.3, 0.9];
        let mut rng = StreamKey::new(99).rng();
        let cells = [(false, 0.0), (false, 1.0), (true, 0.0), (true, 1.0)];
        let src_p = [0.25; 4];
        let mut tgt_p: Vec<f64> = cells
            .iter()
            .zip(&src_p)
            .map(|(&(y, x1), p)| {
                let a = if y { truth[2] + truth[3] * x1 } else { truth[0] + truth[1] * x1 };
                p * a.exp()
            })
            .collect();
        let total: f64 = tgt_p.iter().sum();
        tgt_p.iter_mut().for_each(|p| *p /= total);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, probs: &[f64]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            3
        };
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let src: Vec<(f64, f64, bool)> = (0..20_000)
            .map(|_| {
                let (y, x1) = cells[draw(&mut rng, &src_p)];
                (x1, 2.0 * (y as u8 as f64) - 1.0 + normal(&mut rng), y)
            })
            .collect();
        let tgt: Vec<(f64, f64)> = (0..20_000)
            .map(|_| {
                let (y, x1) = cells[draw(&mut rng, &tgt_p)];
                (x1, 2.0 * (y as u8 as f64) - 1.0 + normal(&mut rng))
            })
            .collect();
        let data = dataset(&src, &tgt);
        // true source posterior: logit = 2 * x2 (uniform cells, unit variance)
        let xi = OutcomeModelParams::new(0.0, vec![0.0, 2.0]).unwrap();
        let fit = estimate_tilt(&data, &xi, &TiltOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        // alpha_y absorbs the normalization; compare the shift-invariant contrasts
        let est = fit.theta.to_vec();
        let c = (total).ln();
        let expected = [truth[0] - c, truth[1], truth[2] - c, truth[3]];
        for (e, t) in est.iter().zip(&expected) {
            assert!((e - t).abs() < 0.15, "{est:?} vs {expected:?}");
        }
        assert!(fit.identification.as_ref().unwrap().passed());
    }

    #[test]
    fn identification_examples() {
        let mut rng = StreamKey::new(31).rng();
        let data = random_dataset(&mut rng, 60, 60);
        let xi = OutcomeModelParams::new(0.2, vec![0.4, 1.3]).unwrap();
        let r = check_identification(&data, &xi, &IdentificationOptions::default());
        assert!(r.rank_ok && r.instrument_ok && r.overlap_ok, "{r:?}");
        assert_eq!(r.distinct_x1_points, 2);

        let flat = dataset(
            &[(1.0, 0.3, true), (1.0, -0.2, false), (1.0, 1.0, true)],
            &[(1.0, 0.5), (1.0, 2.0)],
        );
        let r = check_identification(&flat, &xi, &IdentificationOptions::default());
        assert!(!r.rank_ok);
        assert!(r.messages.iter().any(|m| m.contains("rank")));

        let no_x2 = OutcomeModelParams::new(0.2, vec![0.4, 0.0]).unwrap();
        let r = check_identification(&data, &no_x2, &IdentificationOptions::default());
        assert!(!r.instrument_ok);
        assert!(r.messages.iter().any(|m| m.contains("instrument condition fails")));

        let sharp = OutcomeModelParams::new(0.0, vec![0.0, 40.0]).unwrap();
        let r = check_identification(&data, &sharp, &IdentificationOptions::default());
        assert!(!r.overlap_ok);
    }

    #[test]
    fn snapping_merges_float_groups() {
        let data = dataset(
            &[(1.0, 0.3, true), (1.0 + 1e-12, -0.2, false), (0.0, 1.0, true)],
            &[(0.0, 0.5), (1.0, 2.0)],
        );
        let xi = OutcomeModelParams::new(0.2, vec![0.4, 1.3]).unwrap();
        let exact = check_identification(&data, &xi, &IdentificationOptions::default());
        assert_eq!(exact.distinct_x1_points, 3);
        let snapped = check_identification(
            &data,
            &xi,
            &IdentificationOptions {
                snap: Some(1e-6),
                ..Default::default()
            },
        );
        assert_eq!(snapped.distinct_x1_points, 2);
    }
}
