//! Source outcome model: (weighted, optionally ridge-penalized) logistic
//! regression fitted by iteratively reweighted least squares.
//!
//! The ridge penalty applies to the raw-scale slopes; the intercept is never
//! penalized. Use [`fit_logistic_standardized`] to penalize standardized slopes
//! instead.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{clipped_pair, sigmoid, CovariateMatrix, LabeledData, OutcomeModelParams};
use crate::rng::StreamKey;

/// Linear predictors beyond this magnitude flag possible separation.
pub const SEPARATION_THRESHOLD: f64 = 30.0;

const MIN_IRLS_WEIGHT: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone)]
pub struct LogisticOptions {
    /// Bound on the max-norm of the objective gradient.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Ridge penalty on the slopes (`0` = unpenalized MLE).
    pub penalty: f64,
    /// Starting point; zeros when absent.
    pub initial: Option<OutcomeModelParams>,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            penalty: 0.0,
            initial: None,
        }
    }
}

impl LogisticOptions {
    pub fn with_penalty(penalty: f64) -> Self {
        Self {
            penalty,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub params: OutcomeModelParams,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub penalty: f64,
    /// Penalized (weighted) log-likelihood at `params`.
    pub objective: f64,
    /// Some linear predictor exceeded [`SEPARATION_THRESHOLD`] in an unpenalized fit.
    pub separation_warning: bool,
}

impl LogisticFit {
    /// Turns a non-converged fit into [`Error::NonConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                what: "logistic regression",
                iterations: self.iterations,
                gradient_norm: self.final_gradient_norm,
            })
        }
    }
}

/// Maximum-likelihood logistic fit of the source labels on `(x1, x2)`.
pub fn fit_logistic(source: &LabeledData, options: &LogisticOptions) -> Result<LogisticFit> {
    Irls::new(&source.x, &source.y, None, options)?.run(options)
}

/// Logistic fit maximizing `sum_i weight_i * loglik_i - penalty/2 * |xi1|^2`.
pub fn fit_logistic_weighted(
    source: &LabeledData,
    weights: &[f64],
    options: &LogisticOptions,
) -> Result<LogisticFit> {
    if weights.len() != source.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} samples",
            weights.len(),
            source.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be finite and positive".into(),
        ));
    }
    Irls::new(&source.x, &source.y, Some(weights), options)?.run(options)
}

/// Fits on z-scored columns and maps the coefficients back to the raw scale.
/// Constant columns are left unscaled.
pub fn fit_logistic_standardized(
    source: &LabeledData,
    weights: Option<&[f64]>,
    options: &LogisticOptions,
) -> Result<LogisticFit> {
    let d = source.x.d();
    let p = d + source.x.q();
    let n = source.len() as f64;
    let mut mean = vec![0.0; p];
    for row in source.x.rows() {
        for (m, v) in mean.iter_mut().zip(row.x1.iter().chain(row.x2)) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; p];
    for row in source.x.rows() {
        for ((s, m), v) in scale.iter_mut().zip(&mean).zip(row.x1.iter().chain(row.x2)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }

    let mut z = CovariateMatrix::with_capacity(d, source.x.q(), source.len())?;
    let mut buf = vec![0.0; p];
    for row in source.x.rows() {
        for (j, v) in row.x1.iter().chain(row.x2).enumerate() {
            buf[j] = (v - mean[j]) / scale[j];
        }
        z.push(crate::model::Covariates {
            x1: &buf[..d],
            x2: &buf[d..],
        })?;
    }
    let standardized = LabeledData::new(z, source.y.clone())?;

    let mut opts = options.clone();
    opts.initial = options.initial.as_ref().map(|xi| {
        let xi1: Vec<f64> = xi.xi1.iter().zip(&scale).map(|(b, s)| b * s).collect();
        let xi0 = xi.xi0 + xi.xi1.iter().zip(&mean).map(|(b, m)| b * m).sum::<f64>();
        OutcomeModelParams { xi0, xi1 }
    });
    let mut fit = match weights {
        Some(w) => fit_logistic_weighted(&standardized, w, &opts)?,
        None => fit_logistic(&standardized, &opts)?,
    };
    let xi1: Vec<f64> = fit.params.xi1.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let xi0 = fit.params.xi0 - xi1.iter().zip(&mean).map(|(b, m)| b * m).sum::<f64>();
    fit.params = OutcomeModelParams { xi0, xi1 };
    Ok(fit)
}

/// Mean negative log-likelihood of `data` under `xi`, with clipped probabilities.
pub fn mean_negative_loglik(data: &LabeledData, xi: &OutcomeModelParams) -> f64 {
    let total: f64 = data
        .x
        .rows()
        .zip(&data.y)
        .map(|(row, &y)| {
            let (g, gc) = clipped_pair(xi.linear_predictor(row));
            -(if y { g.ln() } else { gc.ln() })
        })
        .sum();
    total / data.len() as f64
}

#[derive(Debug, Clone)]
pub struct RidgeCvResult {
    pub lambda: f64,
    pub fit: LogisticFit,
    /// Mean held-out negative log-likelihood per grid entry, in grid order.
    pub cv_loss: Vec<f64>,
}

/// Chooses the ridge penalty from `grid` by seeded k-fold cross-validation and
/// refits on all of `source`. Ties go to the larger penalty.
pub fn select_ridge_cv(
    source: &LabeledData,
    grid: &[f64],
    folds: usize,
    seed: u64,
    options: &LogisticOptions,
) -> Result<RidgeCvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty penalty grid".into()));
    }
    if grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidArgument(
            "penalties must be finite and nonnegative".into(),
        ));
    }
    if folds < 2 || source.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {}",
            source.len()
        )));
    }

    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut StreamKey::new(seed).rng());
    let mut assignment = vec![0usize; source.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    let splits: Vec<(LabeledData, LabeledData)> = (0..folds)
        .map(|k| {
            let (held, kept): (Vec<usize>, Vec<usize>) =
                (0..source.len()).partition(|&i| assignment[i] == k);
            (source.select(&kept), source.select(&held))
        })
        .collect();

    let mut cv_loss = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let opts = LogisticOptions {
            penalty: lambda,
            ..options.clone()
        };
        let losses: Vec<Result<f64>> = splits
            .par_iter()
            .map(|(train, test)| {
                let fit = fit_logistic(train, &opts)?;
                Ok(mean_negative_loglik(test, &fit.params))
            })
            .collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        cv_loss.push(sum / folds as f64);
    }

    let mut best = 0;
    for i in 1..grid.len() {
        let tie = (cv_loss[i] - cv_loss[best]).abs() <= 1e-12 * cv_loss[best].abs();
        if cv_loss[i] < cv_loss[best] && !tie || tie && grid[i] > grid[best] {
            best = i;
        }
    }
    let lambda = grid[best];
    let fit = fit_logistic(
        source,
        &LogisticOptions {
            penalty: lambda,
            ..options.clone()
        },
    )?;
    Ok(RidgeCvResult {
        lambda,
        fit,
        cv_loss,
    })
}

/// Newton/IRLS state over the design `(1, x1, x2)`.
struct Irls<'a> {
    x: &'a CovariateMatrix,
    y: &'a [bool],
    weights: Option<&'a [f64]>,
    p: usize,
    penalty: f64,
}

impl<'a> Irls<'a> {
    fn new(
        x: &'a CovariateMatrix,
        y: &'a [bool],
        weights: Option<&'a [f64]>,
        options: &LogisticOptions,
    ) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyDomain("source"));
        }
        if !(options.penalty >= 0.0 && options.penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty must be finite and nonnegative, got {}",
                options.penalty
            )));
        }
        let p = 1 + x.d() + x.q();
        if let Some(init) = &options.initial {
            if init.xi1.len() != p - 1 {
                return Err(Error::DimensionMismatch(format!(
                    "initial outcome model has {} slopes, design has {}",
                    init.xi1.len(),
                    p - 1
                )));
            }
        }
        let irls = Self {
            x,
            y,
            weights,
            p,
            penalty: options.penalty,
        };
        if options.penalty == 0.0 {
            let positives = y.iter().filter(|&&v| v).count();
            if positives == 0 || positives == y.len() {
                return Err(Error::DegenerateLabels);
            }
            irls.check_rank()?;
        }
        Ok(irls)
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn design_row(&self, i: usize, buf: &mut [f64]) {
        let row = self.x.row(i);
        buf[0] = 1.0;
        buf[1..1 + row.x1.len()].copy_from_slice(row.x1);
        buf[1 + row.x1.len()..].copy_from_slice(row.x2);
    }

    /// Rejects designs whose scaled Gram matrix is numerically singular.
    fn check_rank(&self) -> Result<()> {
        let p = self.p;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut buf = vec![0.0; p];
        for i in 0..self.y.len() {
            self.design_row(i, &mut buf);
            let r = DVector::from_column_slice(&buf);
            gram.syger(1.0, &r, &r, 1.0);
        }
        let diag: Vec<f64> = (0..p).map(|j| gram[(j, j)]).collect();
        if diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::SingularSystem);
        }
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] /= (diag[a] * diag[b]).sqrt();
            }
        }
        let eig = gram.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if min <= 1e-12 * max {
            return Err(Error::SingularSystem);
        }
        Ok(())
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.p];
        let mut total = 0.0;
        for i in 0..self.y.len() {
            self.design_row(i, &mut buf);
            let eta = dot(beta, &buf);
            // log g = -softplus(-eta), log(1 - g) = -softplus(eta)
            let ll = if self.y[i] { -softplus(-eta) } else { -softplus(eta) };
            total += self.weight(i) * ll;
        }
        total - 0.5 * self.penalty * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    /// Gradient and negative Hessian of the penalized objective; also reports max |eta|.
    fn derivatives(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
        let p = self.p;
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut buf = vec![0.0; p];
        let mut max_eta = 0.0f64;
        for i in 0..self.y.len() {
            self.design_row(i, &mut buf);
            let eta = dot(beta, &buf);
            max_eta = max_eta.max(eta.abs());
            let g = sigmoid(eta);
            let w = self.weight(i);
            let resid = w * (if self.y[i] { 1.0 } else { 0.0 } - g);
            let curv = w * (g * (1.0 - g)).max(MIN_IRLS_WEIGHT);
            for a in 0..p {
                grad[a] += resid * buf[a];
                let ca = curv * buf[a];
                for b in 0..=a {
                    info[(a, b)] += ca * buf[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        for j in 1..p {
            grad[j] -= self.penalty * beta[j];
            info[(j, j)] += self.penalty;
        }
        (grad, info, max_eta)
    }

    fn run(&self, options: &LogisticOptions) -> Result<LogisticFit> {
        let mut beta = match &options.initial {
            Some(init) => {
                let mut b = Vec::with_capacity(self.p);
                b.push(init.xi0);
                b.extend_from_slice(&init.xi1);
                b
            }
            None => vec![0.0; self.p],
        };
        let mut objective = self.objective(&beta);
        let mut separation = false;
        let mut iterations = 0;
        let mut grad_norm;
        loop {
            let (grad, info, max_eta) = self.derivatives(&beta);
            if self.penalty == 0.0 && max_eta > SEPARATION_THRESHOLD {
                separation = true;
            }
            grad_norm = grad.amax();
            if grad_norm <= options.tolerance || iterations >= options.max_iterations {
                break;
            }
            iterations += 1;
            let step = match info.cholesky() {
                Some(chol) => chol.solve(&grad),
                None => return Err(Error::SingularSystem),
            };

            // Near the optimum the gain of a Newton step falls below the rounding
            // noise of the objective; such steps are accepted rather than halved.
            let slack = 1e-12 * (1.0 + objective.abs());
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                let value = self.objective(&trial);
                if value >= objective - slack {
                    beta = trial;
                    objective = value;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No ascent along the Newton direction at machine precision.
                let (grad, _, _) = self.derivatives(&beta);
                grad_norm = grad.amax();
                break;
            }
        }

        let params = OutcomeModelParams {
            xi0: beta[0],
            xi1: beta[1..].to_vec(),
        };
        if !params.xi0.is_finite() || params.xi1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericRange("logistic coefficients diverged".into()));
        }
        Ok(LogisticFit {
            params,
            converged: grad_norm <= options.tolerance,
            iterations,
            final_gradient_norm: grad_norm,
            penalty: self.penalty,
            objective,
            separation_warning: separation,
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `ln(1 + exp(z))`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalized (weighted) log-likelihood and its gradient, for derivative checks.
pub fn penalized_loglik(
    source: &LabeledData,
    weights: Option<&[f64]>,
    penalty: f64,
    params: &OutcomeModelParams,
) -> (f64, Vec<f64>) {
    let irls = Irls {
        x: &source.x,
        y: &source.y,
        weights,
        p: 1 + source.x.d() + source.x.q(),
        penalty,
    };
    let mut beta = vec![params.xi0];
    beta.extend_from_slice(&params.xi1);
    let (grad, _, _) = irls.derivatives(&beta);
    (irls.objective(&beta), grad.iter().copied().collect())
}
