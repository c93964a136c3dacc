use serde::{Deserialize, Serialize};

use super::dgp::{tilt_from_cells, Replicate};
use super::cell_index;
use crate::error::{Error, Result};
use crate::logistic::{fit_logistic, fit_logistic_weighted, LogisticOptions};
use crate::model::{
    joint_weight, source_posterior, target_posterior, Covariates, LabeledData,
    OutcomeModelParams, TiltParams,
};
use crate::tilt::{estimate_tilt, TiltOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Two-step tilt estimate, posterior `w1 / w`.
    Proposed,
    /// Source logistic fit weighted by the estimated joint tilt weights.
    Reweight,
    /// Source logistic fit, ignoring the shift.
    Naive,
    /// Logistic fit on the labeled target sample.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Proposed, Method::Reweight, Method::Naive, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "Proposed",
            Method::Reweight => "Reweight",
            Method::Naive => "Naive",
            Method::Oracle => "Oracle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted estimate of the target posterior `P0(Y = 1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorModel {
    Tilted {
        theta: TiltParams,
        xi: OutcomeModelParams,
    },
    Logistic(OutcomeModelParams),
}

impl PosteriorModel {
    pub fn posterior(&self, x: Covariates<'_>) -> Result<f64> {
        match self {
            PosteriorModel::Tilted { theta, xi } => target_posterior(x, theta, xi),
            PosteriorModel::Logistic(xi) => source_posterior(x, xi),
        }
    }
}

/// Fitted parameters of the requested methods on one replicate. The outcome
/// model and tilt are always fitted since Naive and Reweight reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFits {
    pub xi: OutcomeModelParams,
    pub theta: TiltParams,
    pub reweight: Option<OutcomeModelParams>,
    pub oracle: Option<OutcomeModelParams>,
}

impl MethodFits {
    pub fn model(&self, method: Method) -> Option<PosteriorModel> {
        match method {
            Method::Proposed => Some(PosteriorModel::Tilted {
                theta: self.theta.clone(),
                xi: self.xi.clone(),
            }),
            Method::Naive => Some(PosteriorModel::Logistic(self.xi.clone())),
            Method::Reweight => self.reweight.clone().map(PosteriorModel::Logistic),
            Method::Oracle => self.oracle.clone().map(PosteriorModel::Logistic),
        }
    }
}

/// Gradient tolerance of bootstrap refits. The solvers' default (1e-8 on sums
/// over thousands of points) sits at the rounding floor of the objective; 1e-6
/// moves estimates by far less than their sampling error and saves iterations.
pub(crate) const REFIT_TOLERANCE: f64 = 1e-6;

/// Fits `methods` on `rep`, starting each solver from `warm` when given.
pub fn fit_methods(rep: &Replicate, methods: &[Method], warm: Option<&MethodFits>) -> Result<MethodFits> {
    fit_methods_with(rep, methods, warm, None)
}

pub(crate) fn fit_methods_with(
    rep: &Replicate,
    methods: &[Method],
    warm: Option<&MethodFits>,
    tolerance: Option<f64>,
) -> Result<MethodFits> {
    let logistic_options = |initial: Option<&OutcomeModelParams>| {
        let mut o = LogisticOptions {
            initial: initial.cloned(),
            ..LogisticOptions::default()
        };
        if let Some(t) = tolerance {
            o.tolerance = t;
        }
        o
    };
    let data = rep.pooled()?;
    let xi = fit_logistic(data.source(), &logistic_options(warm.map(|w| &w.xi)))?
        .require_converged()?
        .params;
    let mut tilt_options = TiltOptions {
        initial: warm.map(|w| w.theta.clone()),
        diagnose: false,
        ..TiltOptions::default()
    };
    if let Some(t) = tolerance {
        tilt_options.tolerance = t;
    }
    let theta = estimate_tilt(&data, &xi, &tilt_options)?.require_converged()?.theta;
    let reweight = if methods.contains(&Method::Reweight) {
        let weights = rep
            .source
            .x
            .rows()
            .zip(&rep.source.y)
            .map(|(row, &y)| joint_weight(row.x1, y, &theta))
            .collect::<Result<Vec<f64>>>()?;
        let init = warm.and_then(|w| w.reweight.as_ref());
        Some(
            fit_logistic_weighted(&rep.source, &weights, &logistic_options(init))?
                .require_converged()?
                .params,
        )
    } else {
        None
    };
    let oracle = if methods.contains(&Method::Oracle) {
        let init = warm.and_then(|w| w.oracle.as_ref());
        Some(fit_logistic(&rep.target, &logistic_options(init))?.require_converged()?.params)
    } else {
        None
    };
    Ok(MethodFits {
        xi,
        theta,
        reweight,
        oracle,
    })
}

/// Fits one method on `rep` and returns its target posterior.
pub fn run_method(method: Method, rep: &Replicate) -> Result<PosteriorModel> {
    let fits = fit_methods(rep, &[method], None)?;
    Ok(fits.model(method).expect("requested method was fitted"))
}

fn cell_frequencies(data: &LabeledData) -> [f64; 4] {
    let mut counts = [0.0; 4];
    for (row, &y) in data.x.rows().zip(&data.y) {
        counts[cell_index(y, row.x1[0] != 0.0)] += 1.0;
    }
    counts.map(|c| c / data.len() as f64)
}

/// Tilt from the observed `(y, x1)` cell frequencies of both domains, using
/// the target labels: the saturated estimate for a binary scalar group feature.
pub fn ideal_tilt(rep: &Replicate) -> Result<TiltParams> {
    tilt_from_cells(&cell_frequencies(&rep.source), &cell_frequencies(&rep.target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    /// `TP / (TP + FN)`; absent without actual positives.
    pub recall: Option<f64>,
    pub accuracy: f64,
    /// `TP / (TP + FP)`; absent without predicted positives.
    pub precision: Option<f64>,
}

pub fn classification_metrics(predicted: &[bool], actual: &[bool]) -> Result<ClassificationMetrics> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no labels to evaluate".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ClassificationMetrics {
        recall: ratio(tp, tp + fn_),
        accuracy: (tp + tn) as f64 / predicted.len() as f64,
        precision: ratio(tp, tp + fp),
    })
}
