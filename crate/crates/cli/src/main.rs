//! `shiftlab` command-line interface.
//!
//! Exit codes: 0 success, 1 input or runtime error, 2 failed identification
//! diagnostics (`diagnose`, or `fit --strict`).

mod artifact;
mod commands;
mod data;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::data::ColumnSchema;

#[derive(Debug, Parser)]
#[command(name = "shiftlab", version, about = "Classifier transfer under group-label shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the outcome model and the tilt; write a model file.
    Fit(commands::FitArgs),
    /// Target posteriors and predicted labels for new covariates.
    Predict(commands::PredictArgs),
    /// Estimate a target-domain label probability, optionally with a bootstrap interval.
    Mean(commands::MeanArgs),
    /// Target ROC curve and AUC of a score.
    Roc(commands::RocArgs),
    /// Check the identification conditions on a data set.
    Diagnose(commands::DiagnoseArgs),
    /// Run the simulation study.
    Simulate(commands::SimulateArgs),
}

/// Column roles, given as comma-separated header names.
#[derive(Debug, Clone, Args)]
pub struct SchemaArgs {
    /// Group columns (x1).
    #[arg(long, value_delimiter = ',', required = true)]
    group_cols: Vec<String>,
    /// Feature columns (x2).
    #[arg(long, value_delimiter = ',', required = true)]
    feature_cols: Vec<String>,
    /// Binary label column of the source rows.
    #[arg(long)]
    label_col: Option<String>,
    /// Domain column (source/target or 1/0) when both domains share one file.
    #[arg(long)]
    domain_col: Option<String>,
}

impl SchemaArgs {
    fn schema(&self) -> anyhow::Result<ColumnSchema> {
        let schema = ColumnSchema {
            group_columns: self.group_cols.clone(),
            feature_columns: self.feature_cols.clone(),
            label_column: self.label_col.clone(),
            domain_column: self.domain_col.clone(),
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// Raised when identification diagnostics fail; maps to exit code 2.
#[derive(Debug)]
pub struct DiagnosticFailure(pub String);

impl std::fmt::Display for DiagnosticFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DiagnosticFailure {}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for failed diagnostics here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Mean(a) => commands::mean(&a),
        Command::Roc(a) => commands::roc(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(d) = e.downcast_ref::<DiagnosticFailure>() {
                eprintln!("identification check failed: {d}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
