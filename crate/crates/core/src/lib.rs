//! Binary classification transfer learning under group-label shift.
//!
//! A labeled source sample and unlabeled target covariates are linked by an
//! exponential tilt of the joint law of the label and the group features,
//! `p0(x1, y) / p1(x1, y) = exp(alpha_y + beta_y' x1)`, while the law of the
//! remaining features given `(y, x1)` is shared. The crate estimates the tilt
//! in two steps ([`logistic`], then [`tilt`]), derives target posteriors and
//! target functionals ([`functionals`], [`rocauc`]), provides bootstrap
//! intervals ([`bootstrap`]) and a simulation study runner ([`simlab`]).

pub mod bootstrap;
pub mod error;
pub mod functionals;
pub mod logistic;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod rocauc;
pub mod simlab;
pub mod tilt;

pub use error::{Error, Result};
pub use model::{
    joint_weight, source_posterior, target_posterior, weight_components, CovariateMatrix,
    CovariateVector, Covariates, LabeledData, OutcomeModelParams, PooledDataset, TiltParams,
    WeightComponents,
};
