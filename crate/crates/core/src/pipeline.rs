//! The two-step estimator: outcome model on the labeled source sample, then
//! the tilt given the fitted outcome model.

use crate::error::Result;
use crate::logistic::{fit_logistic, fit_logistic_standardized, LogisticFit, LogisticOptions};
use crate::model::{OutcomeModelParams, PooledDataset, TiltParams};
use crate::tilt::{estimate_tilt, TiltFit, TiltOptions};

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub outcome: LogisticOptions,
    pub tilt: TiltOptions,
    /// Fit the outcome model on z-scored covariates (penalty then acts on standardized slopes).
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepFit {
    pub outcome: LogisticFit,
    pub tilt: TiltFit,
}

impl TwoStepFit {
    pub fn xi(&self) -> &OutcomeModelParams {
        &self.outcome.params
    }

    pub fn theta(&self) -> &TiltParams {
        &self.tilt.theta
    }
}

/// Fits the outcome model, then the tilt. Either step failing to converge is an error.
pub fn fit_two_step(data: &PooledDataset, options: &PipelineOptions) -> Result<TwoStepFit> {
    let outcome = if options.standardize {
        fit_logistic_standardized(data.source(), None, &options.outcome)?
    } else {
        fit_logistic(data.source(), &options.outcome)?
    }
    .require_converged()?;
    let tilt = estimate_tilt(data, &outcome.params, &options.tilt)?.require_converged()?;
    Ok(TwoStepFit { outcome, tilt })
}

/// Second step only, with the outcome model held at `xi`.
pub fn fit_tilt_given(
    data: &PooledDataset,
    xi: &OutcomeModelParams,
    options: &TiltOptions,
) -> Result<TiltFit> {
    estimate_tilt(data, xi, options)?.require_converged()
}
