//! Estimators of target expectations `E0[h(X, Y)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    joint_weight, weight_components, CovariateMatrix, Covariates, LabeledData,
    OutcomeModelParams, PooledDataset, TiltParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionalMethod {
    /// Importance-weighted average over the labeled source sample.
    Iw,
    /// Posterior-mixed average over the target covariates.
    Reg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub method: FunctionalMethod,
    pub n_used: usize,
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `(1/n1) sum_i h(x_i, y_i) w(x_i, y_i; theta)`.
pub fn estimate_iw<H>(h: H, source: &LabeledData, theta: &TiltParams) -> Result<FunctionalEstimate>
where
    H: Fn(Covariates<'_>, bool) -> f64,
{
    if source.is_empty() {
        return Err(Error::EmptyDomain("source"));
    }
    let mut total = 0.0;
    for (row, &y) in source.x.rows().zip(&source.y) {
        let hv = finite(h(row, y), "h on a source point")?;
        total += hv * joint_weight(row.x1, y, theta)?;
    }
    Ok(FunctionalEstimate {
        value: finite(total / source.len() as f64, "IW estimate")?,
        method: FunctionalMethod::Iw,
        n_used: source.len(),
    })
}

/// `(1/n0) sum_j [h(x_j, 1) H_j + h(x_j, 0) (1 - H_j)]` with `H` the target posterior.
pub fn estimate_reg<H>(
    h: H,
    target: &CovariateMatrix,
    theta: &TiltParams,
    xi: &OutcomeModelParams,
) -> Result<FunctionalEstimate>
where
    H: Fn(Covariates<'_>, bool) -> f64,
{
    if target.is_empty() {
        return Err(Error::EmptyDomain("target"));
    }
    let mut total = 0.0;
    for row in target.rows() {
        let c = weight_components(row, theta, xi)?;
        let h1 = finite(h(row, true), "h on a target point")?;
        let h0 = finite(h(row, false), "h on a target point")?;
        total += h1 * c.posterior() + h0 * c.complement();
    }
    Ok(FunctionalEstimate {
        value: total / target.len() as f64,
        method: FunctionalMethod::Reg,
        n_used: target.len(),
    })
}

/// Target prevalence `mu = E0(Y)`.
pub fn estimate_target_mean(
    data: &PooledDataset,
    theta: &TiltParams,
    xi: &OutcomeModelParams,
    method: FunctionalMethod,
) -> Result<FunctionalEstimate> {
    let label = |_: Covariates<'_>, y: bool| if y { 1.0 } else { 0.0 };
    match method {
        FunctionalMethod::Iw => estimate_iw(label, data.source(), theta),
        FunctionalMethod::Reg => estimate_reg(label, data.target(), theta, xi),
    }
}
