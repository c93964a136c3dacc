//! Domain types and the closed-form weight and posterior formulas of the
//! exponential tilting model.
//!
//! Covariates are split into group features `x1` (dimension `d >= 1`) and
//! non-group features `x2` (dimension `q >= 0`). The tilt
//! `p0(x1, y) / p1(x1, y) = exp(alpha_y + beta_y' x1)` only involves `x1`; the
//! source posterior `g(x) = P1(Y = 1 | x)` involves both.
//!
//! Sign convention: `g(x; xi) = sigmoid(xi0 + xi1' x)`. Stored `xi` is therefore
//! the negation of the parameterization `1 / (1 + exp(xi0 + xi1' x))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities produced by the outcome model are clipped to `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-12;

/// An owned covariate vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector {
    x1: Vec<f64>,
    x2: Vec<f64>,
}

impl CovariateVector {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if x1.is_empty() {
            return Err(Error::DimensionMismatch(
                "at least one group feature is required".into(),
            ));
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate entry".into()));
        }
        Ok(Self { x1, x2 })
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn view(&self) -> Covariates<'_> {
        Covariates {
            x1: &self.x1,
            x2: &self.x2,
        }
    }
}

/// Borrowed view of one covariate row.
#[derive(Debug, Clone, Copy)]
pub struct Covariates<'a> {
    pub x1: &'a [f64],
    pub x2: &'a [f64],
}

impl Covariates<'_> {
    pub fn to_owned(&self) -> CovariateVector {
        CovariateVector {
            x1: self.x1.to_vec(),
            x2: self.x2.to_vec(),
        }
    }
}

/// Row-major storage for a sequence of covariate vectors sharing `(d, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    d: usize,
    q: usize,
    x1: Vec<f64>,
    x2: Vec<f64>,
}

impl CovariateMatrix {
    pub fn new(d: usize, q: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::DimensionMismatch(
                "at least one group feature is required".into(),
            ));
        }
        Ok(Self {
            d,
            q,
            x1: Vec::new(),
            x2: Vec::new(),
        })
    }

    pub fn with_capacity(d: usize, q: usize, n: usize) -> Result<Self> {
        let mut m = Self::new(d, q)?;
        m.x1.reserve(n * d);
        m.x2.reserve(n * q);
        Ok(m)
    }

    pub fn from_rows<'a, I>(d: usize, q: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = Covariates<'a>>,
    {
        let mut m = Self::new(d, q)?;
        for row in rows {
            m.push(row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: Covariates<'_>) -> Result<()> {
        if row.x1.len() != self.d || row.x2.len() != self.q {
            return Err(Error::DimensionMismatch(format!(
                "row has (d, q) = ({}, {}), expected ({}, {})",
                row.x1.len(),
                row.x2.len(),
                self.d,
                self.q
            )));
        }
        if row.x1.iter().chain(row.x2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate entry".into()));
        }
        self.x1.extend_from_slice(row.x1);
        self.x2.extend_from_slice(row.x2);
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.x1.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    pub fn row(&self, i: usize) -> Covariates<'_> {
        Covariates {
            x1: &self.x1[i * self.d..(i + 1) * self.d],
            x2: &self.x2[i * self.q..(i + 1) * self.q],
        }
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = Covariates<'_>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut x1 = Vec::with_capacity(indices.len() * self.d);
        let mut x2 = Vec::with_capacity(indices.len() * self.q);
        for &i in indices {
            x1.extend_from_slice(&self.x1[i * self.d..(i + 1) * self.d]);
            x2.extend_from_slice(&self.x2[i * self.q..(i + 1) * self.q]);
        }
        Self {
            d: self.d,
            q: self.q,
            x1,
            x2,
        }
    }
}

/// Covariates with binary labels; the labeled source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub x: CovariateMatrix,
    pub y: Vec<bool>,
}

impl LabeledData {
    pub fn new(x: CovariateMatrix, y: Vec<bool>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Labeled source samples plus unlabeled target covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDataset {
    source: LabeledData,
    target: CovariateMatrix,
}

impl PooledDataset {
    pub fn new(source: LabeledData, target: CovariateMatrix) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::EmptyDomain("source"));
        }
        if target.is_empty() {
            return Err(Error::EmptyDomain("target"));
        }
        if source.x.d() != target.d() || source.x.q() != target.q() {
            return Err(Error::DimensionMismatch(format!(
                "source has (d, q) = ({}, {}), target has ({}, {})",
                source.x.d(),
                source.x.q(),
                target.d(),
                target.q()
            )));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &LabeledData {
        &self.source
    }

    pub fn target(&self) -> &CovariateMatrix {
        &self.target
    }

    pub fn n1(&self) -> usize {
        self.source.len()
    }

    pub fn n0(&self) -> usize {
        self.target.len()
    }

    /// Target-to-source sample-size ratio `n0 / n1`.
    pub fn rho(&self) -> f64 {
        self.n0() as f64 / self.n1() as f64
    }

    pub fn d(&self) -> usize {
        self.target.d()
    }

    pub fn q(&self) -> usize {
        self.target.q()
    }

    /// All covariate rows, source first.
    pub fn pooled_rows(&self) -> impl Iterator<Item = Covariates<'_>> + '_ {
        self.source.x.rows().chain(self.target.rows())
    }

    /// Domain-stratified resample: `source_idx` indexes source rows, `target_idx` target rows.
    pub fn resample(&self, source_idx: &[usize], target_idx: &[usize]) -> Self {
        Self {
            source: self.source.select(source_idx),
            target: self.target.select(target_idx),
        }
    }
}

/// Shift parameters `(alpha0, beta0, alpha1, beta1)` of the exponential tilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltParams {
    pub alpha0: f64,
    pub beta0: Vec<f64>,
    pub alpha1: f64,
    pub beta1: Vec<f64>,
}

impl TiltParams {
    pub fn new(alpha0: f64, beta0: Vec<f64>, alpha1: f64, beta1: Vec<f64>) -> Result<Self> {
        if beta0.len() != beta1.len() || beta0.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "beta0 has length {}, beta1 has length {}",
                beta0.len(),
                beta1.len()
            )));
        }
        let t = Self {
            alpha0,
            beta0,
            alpha1,
            beta1,
        };
        if t.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tilt parameter".into()));
        }
        Ok(t)
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            alpha0: 0.0,
            beta0: vec![0.0; d],
            alpha1: 0.0,
            beta1: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    /// Flattened as `(alpha0, beta0, alpha1, beta1)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim() + 2);
        v.push(self.alpha0);
        v.extend_from_slice(&self.beta0);
        v.push(self.alpha1);
        v.extend_from_slice(&self.beta1);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 4 || !v.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "tilt vector must have length 2d + 2, got {}",
                v.len()
            )));
        }
        let d = v.len() / 2 - 1;
        Self::new(
            v[0],
            v[1..=d].to_vec(),
            v[d + 1],
            v[d + 2..].to_vec(),
        )
    }

    /// `alpha_y + beta_y' x1`.
    #[inline]
    pub fn log_ratio(&self, x1: &[f64], y: bool) -> f64 {
        if y {
            self.alpha1 + dot(&self.beta1, x1)
        } else {
            self.alpha0 + dot(&self.beta0, x1)
        }
    }
}

/// Logistic parameters of the source posterior; `xi1` covers `(x1, x2)` in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModelParams {
    pub xi0: f64,
    pub xi1: Vec<f64>,
}

impl OutcomeModelParams {
    pub fn new(xi0: f64, xi1: Vec<f64>) -> Result<Self> {
        if !xi0.is_finite() || xi1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome model parameter".into()));
        }
        Ok(Self { xi0, xi1 })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            xi0: 0.0,
            xi1: vec![0.0; p],
        }
    }

    /// `xi0 + xi1' x`, without a dimension check.
    #[inline]
    pub fn linear_predictor(&self, x: Covariates<'_>) -> f64 {
        let d = x.x1.len();
        self.xi0 + dot(&self.xi1[..d], x.x1) + dot(&self.xi1[d..], x.x2)
    }

    fn check(&self, x: Covariates<'_>) -> Result<()> {
        if x.x1.len() + x.x2.len() != self.xi1.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcome model has {} slopes, covariates have {} entries",
                self.xi1.len(),
                x.x1.len() + x.x2.len()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Clipped `(g, 1 - g)` for linear predictor `eta`. The second entry is formed
/// as `1 - g` so that the pair sums to exactly 1.
#[inline]
pub(crate) fn clipped_pair(eta: f64) -> (f64, f64) {
    let g = sigmoid(eta).clamp(PROB_EPS, 1.0 - PROB_EPS);
    (g, 1.0 - g)
}

/// Source posterior `g(x; xi) = sigmoid(xi0 + xi1' x)`, clipped to `[EPS, 1 - EPS]`.
pub fn source_posterior(x: Covariates<'_>, xi: &OutcomeModelParams) -> Result<f64> {
    xi.check(x)?;
    Ok(clipped_pair(xi.linear_predictor(x)).0)
}

fn check_tilt(x1: &[f64], theta: &TiltParams) -> Result<()> {
    if x1.len() != theta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "tilt has dimension {}, x1 has length {}",
            theta.dim(),
            x1.len()
        )));
    }
    Ok(())
}

fn checked_exp(z: f64) -> Result<f64> {
    let v = z.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericRange(format!("exp({z}) overflows")))
    }
}

/// Joint weight `w(x, y; theta) = exp(alpha_y + beta_y' x1)`.
pub fn joint_weight(x1: &[f64], y: bool, theta: &TiltParams) -> Result<f64> {
    check_tilt(x1, theta)?;
    checked_exp(theta.log_ratio(x1, y))
}

/// The class-0 and class-1 parts of the covariate density ratio and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightComponents {
    pub w0: f64,
    pub w1: f64,
    pub w: f64,
}

impl WeightComponents {
    /// Target posterior `w1 / w`.
    pub fn posterior(&self) -> f64 {
        self.w1 / self.w
    }

    /// `1 - posterior()`; equals `w0 / w` and complements the posterior exactly.
    pub fn complement(&self) -> f64 {
        1.0 - self.posterior()
    }
}

pub fn weight_components(
    x: Covariates<'_>,
    theta: &TiltParams,
    xi: &OutcomeModelParams,
) -> Result<WeightComponents> {
    check_tilt(x.x1, theta)?;
    xi.check(x)?;
    let (g, gc) = clipped_pair(xi.linear_predictor(x));
    let w1 = checked_exp(theta.log_ratio(x.x1, true))? * g;
    let w0 = checked_exp(theta.log_ratio(x.x1, false))? * gc;
    let w = w0 + w1;
    if !w.is_finite() {
        return Err(Error::NumericRange("w0 + w1 overflows".into()));
    }
    Ok(WeightComponents { w0, w1, w })
}

/// Model-implied target posterior `P0(Y = 1 | x) = w1 / (w0 + w1)`.
pub fn target_posterior(
    x: Covariates<'_>,
    theta: &TiltParams,
    xi: &OutcomeModelParams,
) -> Result<f64> {
    Ok(weight_components(x, theta, xi)?.posterior())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cov(x1: &[f64], x2: &[f64]) -> CovariateVector {
        CovariateVector::new(x1.to_vec(), x2.to_vec()).unwrap()
    }

    fn design_theta() -> TiltParams {
        TiltParams::new(5f64.ln(), vec![0.05f64.ln()], 0.25f64.ln(), vec![12f64.ln()]).unwrap()
    }

    #[test]
    fn source_posterior_examples() {
        let x = cov(&[2.0], &[1.5, -0.3]);
        let zero = OutcomeModelParams::zeros(3);
        assert_eq!(source_posterior(x.view(), &zero).unwrap(), 0.5);

        let xi = OutcomeModelParams::new(3f64.ln(), vec![0.0; 3]).unwrap();
        assert!((source_posterior(x.view(), &xi).unwrap() - 0.75).abs() < 1e-15);

        let xi = OutcomeModelParams::new(0.0, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((source_posterior(x.view(), &xi).unwrap() - 0.880_797_077_977_882_4).abs() < 1e-12);

        let bad = OutcomeModelParams::zeros(2);
        assert!(matches!(
            source_posterior(x.view(), &bad),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn source_posterior_is_clipped() {
        let x = cov(&[1.0], &[]);
        let xi = OutcomeModelParams::new(0.0, vec![100.0]).unwrap();
        assert_eq!(source_posterior(x.view(), &xi).unwrap(), 1.0 - PROB_EPS);
        let xi = OutcomeModelParams::new(0.0, vec![-100.0]).unwrap();
        assert_eq!(source_posterior(x.view(), &xi).unwrap(), PROB_EPS);
    }

    #[test]
    fn joint_weight_examples() {
        let zero = TiltParams::zeros(1);
        assert_eq!(joint_weight(&[3.0], true, &zero).unwrap(), 1.0);
        let theta = design_theta();
        assert!((joint_weight(&[0.0], false, &theta).unwrap() - 5.0).abs() < 1e-12);
        assert!((joint_weight(&[1.0], true, &theta).unwrap() - 3.0).abs() < 1e-12);
        assert!((joint_weight(&[1.0], false, &theta).unwrap() - 0.25).abs() < 1e-12);
        assert!((joint_weight(&[0.0], true, &theta).unwrap() - 0.25).abs() < 1e-12);

        let huge = TiltParams::new(800.0, vec![0.0], 0.0, vec![0.0]).unwrap();
        assert!(matches!(
            joint_weight(&[0.0], false, &huge),
            Err(Error::NumericRange(_))
        ));
        assert!(matches!(
            joint_weight(&[0.0, 1.0], false, &zero),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn weight_components_examples() {
        let x = cov(&[0.0], &[0.7]);
        let xi = OutcomeModelParams::zeros(2);
        let c = weight_components(x.view(), &TiltParams::zeros(1), &xi).unwrap();
        assert_eq!((c.w0, c.w1, c.w), (0.5, 0.5, 1.0));

        let c = weight_components(x.view(), &design_theta(), &xi).unwrap();
        assert!((c.w0 - 2.5).abs() < 1e-12);
        assert!((c.w1 - 0.125).abs() < 1e-12);
        assert!((c.w - 2.625).abs() < 1e-12);
        assert_eq!(c.w, c.w0 + c.w1);
    }

    #[test]
    fn target_posterior_examples() {
        let x = cov(&[0.0], &[0.7]);
        let xi = OutcomeModelParams::zeros(2);
        let h = target_posterior(x.view(), &design_theta(), &xi).unwrap();
        assert!((h - 1.0 / 21.0).abs() < 1e-12);

        let xi = OutcomeModelParams::new(0.3, vec![-0.4, 1.1]).unwrap();
        let h = target_posterior(x.view(), &TiltParams::zeros(1), &xi).unwrap();
        assert!((h - source_posterior(x.view(), &xi).unwrap()).abs() < 1e-15);

        // g clipped at EPS keeps H strictly inside (0, 1)
        let xi = OutcomeModelParams::new(-200.0, vec![0.0, 0.0]).unwrap();
        let h = target_posterior(x.view(), &design_theta(), &xi).unwrap();
        assert!(h > 0.0 && h < 1.0);
    }

    #[test]
    fn tilt_vector_layout() {
        let t = TiltParams::new(1.0, vec![2.0, 3.0], 4.0, vec![5.0, 6.0]).unwrap();
        assert_eq!(t.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(TiltParams::from_slice(&t.to_vec()).unwrap(), t);
        assert!(TiltParams::from_slice(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pooled_dataset_validation() {
        let src = LabeledData::new(CovariateMatrix::new(1, 1).unwrap(), vec![]).unwrap();
        let mut tgt = CovariateMatrix::new(1, 1).unwrap();
        tgt.push(cov(&[1.0], &[2.0]).view()).unwrap();
        assert_eq!(
            PooledDataset::new(src, tgt.clone()),
            Err(Error::EmptyDomain("source"))
        );

        let mut sx = CovariateMatrix::new(1, 2).unwrap();
        sx.push(cov(&[1.0], &[2.0, 3.0]).view()).unwrap();
        let src = LabeledData::new(sx, vec![true]).unwrap();
        assert!(matches!(
            PooledDataset::new(src, tgt),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(CovariateMatrix::new(1, 1)
            .unwrap()
            .push(cov(&[1.0], &[2.0, 3.0]).view())
            .is_err());
        assert!(CovariateVector::new(vec![f64::NAN], vec![]).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..4, 0usize..4).prop_flat_map(|(d, q)| {
            (
                prop::collection::vec(-3.0f64..3.0, d),
                prop::collection::vec(-3.0f64..3.0, q),
                prop::collection::vec(-4.0f64..4.0, 2 * d + 2),
                prop::collection::vec(-4.0f64..4.0, d + q + 1),
            )
        })
    }

    proptest! {
        #[test]
        fn weight_identities_hold((x1, x2, th, xv) in arb_case()) {
            let x = cov(&x1, &x2);
            let theta = TiltParams::from_slice(&th).unwrap();
            let xi = OutcomeModelParams::new(xv[0], xv[1..].to_vec()).unwrap();
            let c = weight_components(x.view(), &theta, &xi).unwrap();
            prop_assert!(c.w0 > 0.0 && c.w1 > 0.0);
            prop_assert_eq!(c.w, c.w0 + c.w1);
            prop_assert_eq!(c.posterior() + c.complement(), 1.0);
            let h = target_posterior(x.view(), &theta, &xi).unwrap();
            prop_assert_eq!(h, c.posterior());

            let g = source_posterior(x.view(), &xi).unwrap();
            prop_assume!(xi.linear_predictor(x.view()).abs() < 20.0);
            let j1 = joint_weight(&x1, true, &theta).unwrap();
            let j0 = joint_weight(&x1, false, &theta).unwrap();
            prop_assert!((j1 - c.w1 / g).abs() <= 1e-12 * j1);
            prop_assert!((j0 - c.w0 / (1.0 - g)).abs() <= 1e-12 * j0);

            // determinism
            prop_assert_eq!(weight_components(x.view(), &theta, &xi).unwrap(), c);
        }

        #[test]
        fn zero_tilt_reduces_to_source((x1, x2, _th, xv) in arb_case()) {
            let x = cov(&x1, &x2);
            let theta = TiltParams::zeros(x1.len());
            let xi = OutcomeModelParams::new(xv[0], xv[1..].to_vec()).unwrap();
            prop_assert_eq!(joint_weight(&x1, true, &theta).unwrap(), 1.0);
            prop_assert_eq!(joint_weight(&x1, false, &theta).unwrap(), 1.0);
            let h = target_posterior(x.view(), &theta, &xi).unwrap();
            let g = source_posterior(x.view(), &xi).unwrap();
            prop_assert!((h - g).abs() < 1e-15);
        }
    }
}
