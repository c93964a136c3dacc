//! Simulation study: a multinomial-Gaussian data generator with group-label
//! shift, the four competing classifiers, and replication into summary tables.

mod dgp;
mod methods;
mod study;

pub use dgp::{
    gen_domain, gen_replicate, true_source_coefficients, true_source_posterior,
    true_target_posterior, true_tilt, Domain, Replicate,
};
pub use methods::{
    classification_metrics, fit_methods, ideal_tilt, run_method, ClassificationMetrics,
    Method, MethodFits, PosteriorModel,
};
pub use study::{run_study, compute_truths, MetricsRow, StudyReport, Truths};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells of the `(y, x1)` multinomial, in the order used by `pi_source` / `pi_target`.
pub const CELLS: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

pub(crate) fn cell_index(y: bool, x1: bool) -> usize {
    2 * y as usize + x1 as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Source probabilities of `(y, x1)` = (0,0), (0,1), (1,0), (1,1).
    pub pi_source: [f64; 4],
    pub pi_target: [f64; 4],
    /// `x21 | x1 ~ N(gamma[0] (x1 - 1), sigma[0]^2)`, `x22 | y ~ N(gamma[1] (y - 1), sigma[1]^2)`.
    pub gamma: [f64; 2],
    pub sigma: [f64; 2],
    /// Rate of the exponential feature `x24`.
    pub lambda: f64,
    pub n1: usize,
    pub n0: usize,
    pub reps: usize,
    /// Bootstrap resamples per replicate; 0 disables intervals.
    #[serde(default)]
    pub bootstrap_b: usize,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_roc_u")]
    pub roc_u: Vec<f64>,
    /// Target sample size used to evaluate the AUC, ROC and classification truths.
    #[serde(default = "default_truth_n")]
    pub truth_n: usize,
    /// Bootstrap all four classifiers; when false only the proposed estimator
    /// (and the ideal tilt) get intervals.
    #[serde(default = "default_true")]
    pub bootstrap_all_methods: bool,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_level() -> f64 {
    0.95
}

fn default_roc_u() -> Vec<f64> {
    vec![0.1, 0.2]
}

fn default_truth_n() -> usize {
    1_000_000
}

fn default_true() -> bool {
    true
}

impl SimConfig {
    /// The reference design with `n1 = n0 = 2000`, 500 replicates and 500 resamples.
    pub fn reference_design() -> Self {
        Self {
            pi_source: [0.1, 0.4, 0.4, 0.1],
            pi_target: [0.5, 0.1, 0.1, 0.3],
            gamma: [7.0, -3.0],
            sigma: [2.0, 2.0],
            lambda: 1.0,
            n1: 2000,
            n0: 2000,
            reps: 500,
            bootstrap_b: 500,
            seed: 20_240_601,
            threshold: default_threshold(),
            level: default_level(),
            roc_u: default_roc_u(),
            truth_n: default_truth_n(),
            bootstrap_all_methods: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, pi) in [("pi_source", &self.pi_source), ("pi_target", &self.pi_target)] {
            if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} entries must be finite and non-negative"
                )));
            }
            let total: f64 = pi.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{name} sums to {total}, not 1"
                )));
            }
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("gamma must be finite".into()));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if self.n1 == 0 || self.n0 == 0 || self.reps == 0 || self.truth_n == 0 {
            return Err(Error::InvalidArgument(
                "n1, n0, reps and truth_n must be positive".into(),
            ));
        }
        if self.bootstrap_b == 1 {
            return Err(Error::InvalidArgument(
                "bootstrap_b must be 0 or at least 2".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold must lie in (0, 1)".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument("level must lie in (0, 1)".into()));
        }
        if self.roc_u.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
            return Err(Error::InvalidArgument("roc_u entries must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
