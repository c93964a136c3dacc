//! Target class-conditional score distributions, ROC curve and AUC.
//!
//! The class-conditional CDFs of a score are estimated from target
//! covariates only, weighting each target point by its estimated posterior
//! class probability. Ties use the `<=` convention in CDFs and half credit in
//! the AUC.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{target_posterior, Covariates, OutcomeModelParams, PooledDataset, TiltParams};

/// A discrete distribution on scores: strictly increasing atoms with
/// nonnegative masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCdf {
    atoms: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedCdf {
    /// Builds from `(score, weight)` pairs. Tied scores are merged and the
    /// masses renormalized.
    pub fn from_weighted(scores: &[f64], weights: &[f64]) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores but {} weights",
                scores.len(),
                weights.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut atoms: Vec<f64> = Vec::with_capacity(scores.len());
        let mut masses: Vec<f64> = Vec::with_capacity(scores.len());
        for i in order {
            // -0.0 and 0.0 are one atom
            let s = scores[i] + 0.0;
            match atoms.last() {
                Some(&last) if last == s => *masses.last_mut().unwrap() += weights[i],
                _ => {
                    atoms.push(s);
                    masses.push(weights[i]);
                }
            }
        }
        Self::from_atoms(atoms, masses)
    }

    /// Builds from already merged, strictly increasing atoms.
    pub fn from_atoms(atoms: Vec<f64>, mut masses: Vec<f64>) -> Result<Self> {
        if atoms.len() != masses.len() || atoms.is_empty() {
            return Err(Error::InvalidArgument(
                "atoms and masses must be nonempty and of equal length".into(),
            ));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "atoms must be strictly increasing".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) || masses.iter().any(|m| *m < 0.0) {
            return Err(Error::InvalidArgument(
                "masses must be nonnegative with a positive finite total".into(),
            ));
        }
        masses.iter_mut().for_each(|m| *m /= total);
        let last_positive = masses.iter().rposition(|&m| m > 0.0).unwrap();
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for (k, m) in masses.iter().enumerate() {
            acc += m;
            cumulative.push(if k >= last_positive { 1.0 } else { acc.min(1.0) });
        }
        Ok(Self {
            atoms,
            masses,
            cumulative,
        })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `F(u)`: total mass on atoms `<= u`.
    pub fn evaluate(&self, u: f64) -> f64 {
        let k = self.atoms.partition_point(|&a| a <= u);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Generalized inverse `inf{u : F(u) >= p}` over the atoms, for `0 < p <= 1`.
    pub fn quantile(&self, p: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < p);
        self.atoms[k.min(self.atoms.len() - 1)]
    }

    /// Total order on (atoms, masses), used to pick one orientation of the AUC sweep.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let by_atoms = self
            .atoms
            .iter()
            .zip(&other.atoms)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.atoms.len().cmp(&other.atoms.len()));
        by_atoms.then_with(|| {
            self.masses
                .iter()
                .zip(&other.masses)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }
}

/// Estimated class-conditional CDFs `(F0, F1)` and the mean posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCdfs {
    pub f0: WeightedCdf,
    pub f1: WeightedCdf,
    pub mu: f64,
}

/// `F1` puts mass `H_j / (n0 mu)` and `F0` mass `(1 - H_j) / (n0 (1 - mu))` on score `c_j`.
pub fn build_weighted_cdfs(scores: &[f64], posteriors: &[f64]) -> Result<ClassCdfs> {
    if scores.is_empty() {
        return Err(Error::EmptyDomain("target"));
    }
    if scores.len() != posteriors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores but {} posteriors",
            scores.len(),
            posteriors.len()
        )));
    }
    if posteriors.iter().any(|h| !(0.0..=1.0).contains(h)) {
        return Err(Error::InvalidArgument(
            "posteriors must lie in [0, 1]".into(),
        ));
    }
    let n = scores.len() as f64;
    let mu = posteriors.iter().sum::<f64>() / n;
    if mu <= 0.0 || mu >= 1.0 {
        return Err(Error::DegenerateClass(mu));
    }
    let w1: Vec<f64> = posteriors.iter().map(|h| h / (n * mu)).collect();
    let w0: Vec<f64> = posteriors.iter().map(|h| (1.0 - h) / (n * (1.0 - mu))).collect();
    Ok(ClassCdfs {
        f0: WeightedCdf::from_weighted(scores, &w0)?,
        f1: WeightedCdf::from_weighted(scores, &w1)?,
        mu,
    })
}

/// `ROC(u) = 1 - F1(F0^{-1}(1 - u))`.
pub fn roc_at(f0: &WeightedCdf, f1: &WeightedCdf, u: f64) -> f64 {
    1.0 - f1.evaluate(f0.quantile(1.0 - u))
}

/// `sum_j m1_j [F0(c_j-) + m0(c_j) / 2]` by a merged sweep over both atom sets.
fn auc_sweep(f0: &WeightedCdf, f1: &WeightedCdf) -> f64 {
    let (a0, m0) = (&f0.atoms, &f0.masses);
    let (a1, m1) = (&f1.atoms, &f1.masses);
    let mut below = 0.0; // F0 mass strictly below the current class-1 atom
    let mut k = 0;
    let mut total = 0.0;
    for (j, &c) in a1.iter().enumerate() {
        while k < a0.len() && a0[k] < c {
            below += m0[k];
            k += 1;
        }
        let tie = if k < a0.len() && a0[k] == c { m0[k] } else { 0.0 };
        total += m1[j] * (below + 0.5 * tie);
    }
    total
}

/// Plug-in AUC `P(S1 > S0) + P(S1 = S0) / 2`.
///
/// One orientation is always swept and the other obtained as its complement,
/// so `auc(f0, f1) + auc(f1, f0) == 1` exactly. Identical laws give exactly 0.5.
pub fn auc(f0: &WeightedCdf, f1: &WeightedCdf) -> f64 {
    if f0.atoms == f1.atoms && f0.masses == f1.masses {
        return 0.5;
    }
    if f0.canonical_cmp(f1) != Ordering::Greater {
        auc_sweep(f0, f1)
    } else {
        1.0 - auc_sweep(f1, f0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

/// `u = 0.005, 0.010, ..., 0.995`.
pub fn default_grid() -> Vec<f64> {
    (1..200).map(|k| k as f64 / 200.0).collect()
}

/// ROC values at each false-positive rate in `grid`, which must lie in `(0, 1)`.
/// Estimates close to either end rest on few points and bootstrap intervals
/// there are unreliable.
pub fn roc_curve(f0: &WeightedCdf, f1: &WeightedCdf, grid: &[f64]) -> Result<RocCurve> {
    if grid.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(Error::InvalidArgument(
            "ROC thresholds must lie in (0, 1)".into(),
        ));
    }
    Ok(RocCurve {
        thresholds: grid.to_vec(),
        values: grid.iter().map(|&u| roc_at(f0, f1, u)).collect(),
    })
}

/// The score whose target performance is evaluated.
pub enum Score<'a> {
    /// A pre-specified score function of the covariates.
    Fixed(&'a (dyn Fn(Covariates<'_>) -> f64 + Sync)),
    /// The estimated target posterior itself.
    EstimatedPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEvaluation {
    pub curve: RocCurve,
    pub auc: f64,
    pub cdfs: ClassCdfs,
}

/// ROC curve and AUC of `score` on the target sample, weighting target points
/// by their estimated target posteriors.
pub fn evaluate_classifier(
    data: &PooledDataset,
    theta: &TiltParams,
    xi: &OutcomeModelParams,
    score: &Score<'_>,
    grid: &[f64],
) -> Result<ClassifierEvaluation> {
    let posteriors = data
        .target()
        .rows()
        .map(|row| target_posterior(row, theta, xi))
        .collect::<Result<Vec<f64>>>()?;
    let scores = match score {
        Score::Fixed(f) => data.target().rows().map(f).collect(),
        Score::EstimatedPosterior => posteriors.clone(),
    };
    evaluate_scores(&scores, &posteriors, grid)
}

/// ROC curve and AUC for precomputed scores and posterior weights.
pub fn evaluate_scores(scores: &[f64], posteriors: &[f64], grid: &[f64]) -> Result<ClassifierEvaluation> {
    let cdfs = build_weighted_cdfs(scores, posteriors)?;
    let curve = roc_curve(&cdfs.f0, &cdfs.f1, grid)?;
    let auc = auc(&cdfs.f0, &cdfs.f1);
    Ok(ClassifierEvaluation { curve, auc, cdfs })
}
