//! The fitted-model file: a single JSON document.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use shiftlab::tilt::IdentificationReport;
use shiftlab::{OutcomeModelParams, TiltParams};

use crate::data::ColumnSchema;

pub const FORMAT_VERSION: u32 = 1;

/// Solver settings, reused when bootstrap resamples are refitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// Ridge penalty on the outcome-model slopes (selected by CV when a grid was given).
    pub penalty: f64,
    pub standardize: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub snap_x1: Option<f64>,
    pub starts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeSelection {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub cv_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDiagnostics {
    pub n1: usize,
    pub n0: usize,
    pub outcome_converged: bool,
    pub outcome_iterations: usize,
    pub outcome_gradient_norm: f64,
    pub separation_warning: bool,
    pub tilt_converged: bool,
    pub tilt_iterations: usize,
    pub tilt_gradient_norm: f64,
    pub objective: f64,
    pub ridge: Option<RidgeSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub schema: ColumnSchema,
    pub xi: OutcomeModelParams,
    pub theta: TiltParams,
    pub settings: FitSettings,
    pub diagnostics: FitDiagnostics,
    pub identification: IdentificationReport,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let artifact: Self = serde_json::from_str(&text)
            .with_context(|| format!("{}: not a valid model file", path.display()))?;
        if artifact.format_version != FORMAT_VERSION {
            bail!(
                "{}: format_version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                artifact.format_version
            );
        }
        artifact.schema.validate()?;
        let (d, q) = (artifact.schema.d(), artifact.schema.q());
        if artifact.theta.dim() != d || artifact.theta.beta1.len() != d {
            bail!("{}: tilt dimensions do not match the {d} group columns", path.display());
        }
        if artifact.xi.xi1.len() != d + q {
            bail!("{}: outcome model does not match the {} covariates", path.display(), d + q);
        }
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ModelArtifact {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            schema: ColumnSchema {
                group_columns: vec!["g".into()],
                feature_columns: vec!["a".into()],
                label_column: Some("y".into()),
                domain_column: None,
            },
            xi: OutcomeModelParams::new(0.1 + 0.2, vec![1.0 / 3.0, -2.5e-300]).unwrap(),
            theta: TiltParams::new(5f64.ln(), vec![0.05f64.ln()], 0.25f64.ln(), vec![12f64.ln()])
                .unwrap(),
            settings: FitSettings {
                penalty: 0.0,
                standardize: false,
                tolerance: 1e-8,
                max_iterations: 500,
                snap_x1: None,
                starts: 1,
                seed: 7,
            },
            diagnostics: FitDiagnostics {
                n1: 10,
                n0: 12,
                outcome_converged: true,
                outcome_iterations: 6,
                outcome_gradient_norm: 1e-12,
                separation_warning: false,
                tilt_converged: true,
                tilt_iterations: 14,
                tilt_gradient_norm: 3e-10,
                objective: -30.123456789,
                ridge: None,
            },
            identification: IdentificationReport {
                rank_ok: true,
                distinct_x1_points: 2,
                instrument_ok: true,
                overlap_ok: true,
                messages: vec![],
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let a = example();
        a.save(&path).unwrap();
        let b = ModelArtifact::load(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.xi.xi1[0].to_bits(), b.xi.xi1[0].to_bits());
        assert_eq!(a.theta.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.theta.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut value = serde_json::to_value(example()).unwrap();
        value["extra"] = serde_json::json!(1);
        std::fs::write(&path, value.to_string()).unwrap();
        assert!(ModelArtifact::load(&path).is_err());

        let mut a = example();
        a.format_version = 99;
        a.save(&path).unwrap();
        let err = ModelArtifact::load(&path).unwrap_err().to_string();
        assert!(err.contains("format_version"), "{err}");
    }
}
