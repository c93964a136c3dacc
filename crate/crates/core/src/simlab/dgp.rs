use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{cell_index, SimConfig, CELLS};
use crate::error::{Error, Result};
use crate::model::{
    sigmoid, CovariateMatrix, Covariates, LabeledData, OutcomeModelParams, PooledDataset,
    TiltParams,
};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// One simulated data set. Target labels are kept here but never reach the
/// estimators: [`Replicate::pooled`] drops them.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub source: LabeledData,
    pub target: LabeledData,
}

impl Replicate {
    /// The estimator-facing view: labeled source, unlabeled target.
    pub fn pooled(&self) -> Result<PooledDataset> {
        PooledDataset::new(self.source.clone(), self.target.x.clone())
    }

    pub fn resample(&self, source_idx: &[usize], target_idx: &[usize]) -> Self {
        Self {
            source: self.source.select(source_idx),
            target: self.target.select(target_idx),
        }
    }
}

/// `n` iid draws of `(y, x1, x21, x22, x23, x24)` from the given domain, with
/// `x1` as the single group feature and the rest as features.
pub fn gen_domain(config: &SimConfig, domain: Domain, n: usize, key: StreamKey) -> Result<LabeledData> {
    let pi = match domain {
        Domain::Source => &config.pi_source,
        Domain::Target => &config.pi_target,
    };
    let [g1, g2] = config.gamma;
    let [s1, s2] = config.sigma;
    let bad = |e: &dyn std::fmt::Display| Error::InvalidArgument(e.to_string());
    let z21 = Normal::new(0.0, s1).map_err(|e| bad(&e))?;
    let z22 = Normal::new(0.0, s2).map_err(|e| bad(&e))?;
    let x24 = Exp::new(config.lambda).map_err(|e| bad(&e))?;
    let mut rng = key.rng();
    let mut x = CovariateMatrix::with_capacity(1, 4, n)?;
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut cell = CELLS.len() - 1;
        for (k, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                cell = k;
                break;
            }
        }
        let (label, group) = CELLS[cell];
        let (yv, x1v) = (label as u8 as f64, group as u8 as f64);
        let x2 = [
            g1 * (x1v - 1.0) + z21.sample(&mut rng),
            g2 * (yv - 1.0) + z22.sample(&mut rng),
            rng.random_bool(0.5) as u8 as f64,
            x24.sample(&mut rng),
        ];
        x.push(Covariates { x1: &[x1v], x2: &x2 })?;
        y.push(label);
    }
    LabeledData::new(x, y)
}

/// Source and target samples of one replicate, on sub-streams 0 and 1 of `key`.
pub fn gen_replicate(config: &SimConfig, key: StreamKey) -> Result<Replicate> {
    Ok(Replicate {
        source: gen_domain(config, Domain::Source, config.n1, key.split(0))?,
        target: gen_domain(config, Domain::Target, config.n0, key.split(1))?,
    })
}

/// Tilt implied by two cell-probability vectors: `alpha_y + beta_y x1 = ln(p0(y, x1) / p1(y, x1))`.
pub(crate) fn tilt_from_cells(source: &[f64; 4], target: &[f64; 4]) -> Result<TiltParams> {
    let mut r = [0.0; 4];
    for k in 0..4 {
        if source[k] <= 0.0 || target[k] <= 0.0 {
            return Err(Error::ZeroCell(k));
        }
        r[k] = (target[k] / source[k]).ln();
    }
    let (a0, a1) = (r[cell_index(false, false)], r[cell_index(true, false)]);
    TiltParams::new(
        a0,
        vec![r[cell_index(false, true)] - a0],
        a1,
        vec![r[cell_index(true, true)] - a1],
    )
}

/// The exact tilt relating the configured target and source cell probabilities.
pub fn true_tilt(config: &SimConfig) -> Result<TiltParams> {
    tilt_from_cells(&config.pi_source, &config.pi_target)
}

/// Coefficients of the true source log-odds in `(x1, x21, x22, x23, x24)`.
/// Only the intercept, `x1` and `x22` enter.
pub fn true_source_coefficients(config: &SimConfig) -> Result<OutcomeModelParams> {
    let pi = &config.pi_source;
    if let Some(k) = pi.iter().position(|p| *p <= 0.0) {
        return Err(Error::ZeroCell(k));
    }
    let odds = |x1: bool| (pi[cell_index(true, x1)] / pi[cell_index(false, x1)]).ln();
    let g2 = config.gamma[1];
    let v2 = config.sigma[1] * config.sigma[1];
    OutcomeModelParams::new(
        odds(false) + g2 * g2 / (2.0 * v2),
        vec![odds(true) - odds(false), 0.0, g2 / v2, 0.0, 0.0],
    )
}

/// True source posterior `P1(Y = 1 | x)`.
pub fn true_source_posterior(xi: &OutcomeModelParams, x: Covariates<'_>) -> f64 {
    sigmoid(xi.linear_predictor(x))
}

/// True target posterior `P0(Y = 1 | x)`: the source log-odds shifted by the tilt contrast.
pub fn true_target_posterior(xi: &OutcomeModelParams, theta: &TiltParams, x: Covariates<'_>) -> f64 {
    sigmoid(xi.linear_predictor(x) + theta.log_ratio(x.x1, true) - theta.log_ratio(x.x1, false))
}
