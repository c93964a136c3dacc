use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Serialize;
use shiftlab::bootstrap::{bootstrap_replicates, summarize, BootstrapResult};
use shiftlab::functionals::{estimate_iw, estimate_reg, FunctionalMethod};
use shiftlab::logistic::{
    fit_logistic, fit_logistic_standardized, select_ridge_cv, LogisticFit, LogisticOptions,
};
use shiftlab::pipeline::{fit_tilt_given, fit_two_step, PipelineOptions};
use shiftlab::rng::StreamKey;
use shiftlab::rocauc::{default_grid, evaluate_scores};
use shiftlab::simlab::{gen_replicate, run_study, SimConfig};
use shiftlab::tilt::{
    check_identification, estimate_tilt, estimate_tilt_multistart, IdentificationOptions,
    IdentificationReport, TiltOptions,
};
use shiftlab::{target_posterior, CovariateMatrix, LabeledData, OutcomeModelParams, PooledDataset, TiltParams};

use crate::artifact::{FitDiagnostics, FitSettings, ModelArtifact, RidgeSelection, FORMAT_VERSION};
use crate::data::{load_tables, pooled, DataArgs, Table};
use crate::{DiagnosticFailure, SchemaArgs};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Ridge penalty on the outcome-model slopes.
    #[arg(long, default_value_t = 0.0, conflicts_with = "ridge_grid")]
    penalty: f64,
    /// Candidate ridge penalties, chosen by cross-validation.
    #[arg(long, value_delimiter = ',', conflicts_with = "standardize")]
    ridge_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fit the outcome model on z-scored columns.
    #[arg(long)]
    standardize: bool,
    /// Round group values to this grid before counting distinct groups.
    #[arg(long)]
    snap_x1: Option<f64>,
    /// Tilt optimizer starts (the first from zero, the rest random).
    #[arg(long, default_value_t = 1)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gradient tolerance of both solvers.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 2 when an identification check fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with the model's group and feature columns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MeanMethod {
    Iw,
    Reg,
}

#[derive(Debug, Args)]
pub struct MeanArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = MeanMethod::Reg)]
    method: MeanMethod,
    /// Estimate `P0(Y = label_value)`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    label_value: u8,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Debug, Args)]
struct BootArgs {
    /// Bootstrap resamples; 0 gives the point estimate only.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the outcome model fixed in resamples and refit the tilt only.
    #[arg(long)]
    fixed_xi: bool,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// `posterior` or `fixed:<column>` (a score column of the target file).
    #[arg(long, default_value = "posterior")]
    score: String,
    /// False-positive rates at which to evaluate the curve.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[command(flatten)]
    boot: BootArgs,
    /// Curve CSV `u,roc,ci_low,ci_high`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Labeled source CSV.
    #[arg(long)]
    source: PathBuf,
    /// Target CSV; the overlap check then covers the pooled sample.
    #[arg(long)]
    target: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value_t = 0.0)]
    penalty: f64,
    #[arg(long)]
    snap_x1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation configuration.
    #[arg(long, required_unless_present = "reference", conflicts_with = "reference")]
    config: Option<PathBuf>,
    /// The built-in design: n1 = n0 = 2000, 500 replicates, 500 resamples.
    #[arg(long = "paper-defaults")]
    reference: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap resamples per replicate.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    truth_n: Option<usize>,
    /// Worker threads; SHIFTLAB_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// Write replicate 0 as CSV files into this directory.
    #[arg(long)]
    emit_data: Option<PathBuf>,
    /// Stop after writing the data.
    #[arg(long, requires = "emit_data")]
    emit_only: bool,
    /// Summary table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn identification_options(snap: Option<f64>) -> IdentificationOptions {
    IdentificationOptions {
        snap,
        ..IdentificationOptions::default()
    }
}

/// The rank check needs no fitted outcome model.
fn rank_precheck(data: &PooledDataset, snap: Option<f64>) -> IdentificationReport {
    let zero = OutcomeModelParams::zeros(data.d() + data.q());
    check_identification(data, &zero, &identification_options(snap))
}

fn rank_messages(report: &IdentificationReport) -> String {
    report
        .messages
        .iter()
        .filter(|m| m.starts_with("rank"))
        .cloned()
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let schema = args.schema.schema()?;
    let (src, tgt) = load_tables(&args.data, &schema)?;
    let data = pooled(&src, &tgt, &schema)?;
    if args.starts == 0 {
        bail!("--starts must be at least 1");
    }

    let pre = rank_precheck(&data, args.snap_x1);
    if !pre.rank_ok {
        if args.strict {
            return Err(DiagnosticFailure(rank_messages(&pre)).into());
        }
        eprintln!("warning: {}", rank_messages(&pre));
    }

    let options = LogisticOptions {
        tolerance: args.tol,
        max_iterations: args.max_iter,
        penalty: args.penalty,
        initial: None,
    };
    let (outcome, ridge) = match &args.ridge_grid {
        Some(grid) => {
            let cv = select_ridge_cv(data.source(), grid, args.folds, args.seed, &options)?;
            let selection = RidgeSelection {
                grid: grid.clone(),
                folds: args.folds,
                cv_loss: cv.cv_loss,
            };
            (cv.fit, Some(selection))
        }
        None if args.standardize => {
            (fit_logistic_standardized(data.source(), None, &options)?, None)
        }
        None => (fit_logistic(data.source(), &options)?, None),
    };
    let outcome = outcome.require_converged().context("outcome model")?;
    if outcome.separation_warning {
        eprintln!("warning: outcome-model coefficients are large; the classes may be separable");
    }

    let identification =
        check_identification(&data, &outcome.params, &identification_options(args.snap_x1));
    if !identification.passed() {
        let failed: Vec<&str> = identification
            .messages
            .iter()
            .filter(|m| m.contains("fails"))
            .map(String::as_str)
            .collect();
        if args.strict {
            return Err(DiagnosticFailure(failed.join("; ")).into());
        }
        for m in failed {
            eprintln!("warning: {m}");
        }
    }

    let tilt_options = TiltOptions {
        tolerance: args.tol,
        max_iterations: args.max_iter,
        diagnose: false,
        identification: identification_options(args.snap_x1),
        ..TiltOptions::default()
    };
    let tilt = if args.starts > 1 {
        estimate_tilt_multistart(&data, &outcome.params, &tilt_options, args.starts, args.seed)?
    } else {
        estimate_tilt(&data, &outcome.params, &tilt_options)?
    }
    .require_converged()
    .context("tilt")?;

    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        schema,
        xi: outcome.params.clone(),
        theta: tilt.theta.clone(),
        settings: FitSettings {
            penalty: outcome.penalty,
            standardize: args.standardize,
            tolerance: args.tol,
            max_iterations: args.max_iter,
            snap_x1: args.snap_x1,
            starts: args.starts,
            seed: args.seed,
        },
        diagnostics: FitDiagnostics {
            n1: data.n1(),
            n0: data.n0(),
            outcome_converged: outcome.converged,
            outcome_iterations: outcome.iterations,
            outcome_gradient_norm: outcome.final_gradient_norm,
            separation_warning: outcome.separation_warning,
            tilt_converged: tilt.converged,
            tilt_iterations: tilt.iterations,
            tilt_gradient_norm: tilt.final_gradient_norm,
            objective: tilt.objective_value,
            ridge,
        },
        identification,
    };
    artifact.save(&args.out)?;
    print!("{}", fit_report(&artifact, &outcome));
    Ok(())
}

fn fit_report(a: &ModelArtifact, outcome: &LogisticFit) -> String {
    let mut s = String::new();
    let d = &a.diagnostics;
    s += &format!("source rows {}, target rows {}\n", d.n1, d.n0);
    s += &format!(
        "outcome model: {} iterations, gradient {:.2e}, penalty {}\n",
        outcome.iterations, outcome.final_gradient_norm, outcome.penalty
    );
    s += &format!("  intercept {:>12.6}\n", a.xi.xi0);
    let names = a.schema.group_columns.iter().chain(&a.schema.feature_columns);
    for (name, v) in names.zip(&a.xi.xi1) {
        s += &format!("  {name:<9} {v:>12.6}\n");
    }
    s += &format!(
        "tilt: {} iterations, gradient {:.2e}, objective {:.6}\n",
        d.tilt_iterations, d.tilt_gradient_norm, d.objective
    );
    s += &format!("  alpha0    {:>12.6}\n", a.theta.alpha0);
    for (name, v) in a.schema.group_columns.iter().zip(&a.theta.beta0) {
        s += &format!("  beta0[{name}] {v:>12.6}\n");
    }
    s += &format!("  alpha1    {:>12.6}\n", a.theta.alpha1);
    for (name, v) in a.schema.group_columns.iter().zip(&a.theta.beta1) {
        s += &format!("  beta1[{name}] {v:>12.6}\n");
    }
    let id = &a.identification;
    s += &format!(
        "identification: rank {}, instrument {}, overlap {} ({} distinct groups)\n",
        ok(id.rank_ok),
        ok(id.instrument_ok),
        ok(id.overlap_ok),
        id.distinct_x1_points
    );
    s
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn posteriors(x: &CovariateMatrix, theta: &TiltParams, xi: &OutcomeModelParams) -> Result<Vec<f64>> {
    Ok(x.rows()
        .map(|row| target_posterior(row, theta, xi))
        .collect::<shiftlab::Result<Vec<_>>>()?)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        bail!("--threshold must lie in [0, 1]");
    }
    let model = ModelArtifact::load(&args.model)?;
    let x = Table::read(&args.input)?.covariates(&model.schema)?;
    let h = posteriors(&x, &model.theta, &model.xi)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["posterior", "label"])?;
    for p in h {
        let label = if p >= args.threshold { "1" } else { "0" };
        w.write_record([p.to_string().as_str(), label])?;
    }
    w.flush()?;
    Ok(())
}

/// Refits the model on a resample, starting from the stored parameters.
fn refit(data: &PooledDataset, model: &ModelArtifact, fixed_xi: bool) -> Result<(OutcomeModelParams, TiltParams)> {
    let s = &model.settings;
    let tilt = TiltOptions {
        tolerance: s.tolerance,
        max_iterations: s.max_iterations,
        initial: Some(model.theta.clone()),
        diagnose: false,
        ..TiltOptions::default()
    };
    if fixed_xi {
        let fit = fit_tilt_given(data, &model.xi, &tilt)?;
        return Ok((model.xi.clone(), fit.theta));
    }
    let options = PipelineOptions {
        outcome: LogisticOptions {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            penalty: s.penalty,
            initial: Some(model.xi.clone()),
        },
        tilt,
        standardize: s.standardize,
    };
    let fit = fit_two_step(data, &options)?;
    Ok((fit.outcome.params, fit.tilt.theta))
}

#[derive(Debug, Serialize)]
struct Interval {
    ci_low: f64,
    ci_high: f64,
    failures: usize,
}

impl From<&BootstrapResult> for Interval {
    fn from(b: &BootstrapResult) -> Self {
        Self {
            ci_low: b.ci_low,
            ci_high: b.ci_high,
            failures: b.failures,
        }
    }
}

#[derive(Debug, Serialize)]
struct MeanOutput {
    method: FunctionalMethod,
    label_value: u8,
    estimate: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    level: f64,
    bootstrap: usize,
    failures: usize,
}

fn check_boot(b: &BootArgs) -> Result<()> {
    if !(b.level > 0.0 && b.level < 1.0) {
        bail!("--level must lie in (0, 1)");
    }
    Ok(())
}

pub fn mean(args: &MeanArgs) -> Result<()> {
    check_boot(&args.boot)?;
    let model = ModelArtifact::load(&args.model)?;
    let (src, tgt) = load_tables(&args.data, &model.schema)?;
    let data = pooled(&src, &tgt, &model.schema)?;
    let wanted = args.label_value == 1;
    let h = move |_: shiftlab::Covariates<'_>, y: bool| if y == wanted { 1.0 } else { 0.0 };
    let method = args.method;
    let estimate = move |d: &PooledDataset, xi: &OutcomeModelParams, theta: &TiltParams| -> Result<f64> {
        Ok(match method {
            MeanMethod::Iw => estimate_iw(h, d.source(), theta)?.value,
            MeanMethod::Reg => estimate_reg(h, d.target(), theta, xi)?.value,
        })
    };
    let point = estimate(&data, &model.xi, &model.theta)?;

    let interval = if args.boot.bootstrap > 0 {
        let values = bootstrap_replicates(data.n1(), data.n0(), args.boot.bootstrap, args.boot.seed, |s, t| {
            let d = data.resample(s, t);
            let (xi, theta) = refit(&d, &model, args.boot.fixed_xi)?;
            estimate(&d, &xi, &theta)
        });
        Some(summarize(point, values.into_iter().map(|v| v.ok()), args.boot.level)?)
    } else {
        None
    };
    let out = MeanOutput {
        method: match method {
            MeanMethod::Iw => FunctionalMethod::Iw,
            MeanMethod::Reg => FunctionalMethod::Reg,
        },
        label_value: args.label_value,
        estimate: point,
        ci_low: interval.as_ref().map(|b| b.ci_low),
        ci_high: interval.as_ref().map(|b| b.ci_high),
        level: args.boot.level,
        bootstrap: args.boot.bootstrap,
        failures: interval.as_ref().map_or(0, |b| b.failures),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

enum RocScore {
    Posterior,
    Fixed(Vec<f64>),
}

#[derive(Debug, Serialize)]
struct CurvePoint {
    u: f64,
    roc: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RocOutput {
    score: String,
    auc: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    level: f64,
    bootstrap: usize,
    failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve: Option<Vec<CurvePoint>>,
}

pub fn roc(args: &RocArgs) -> Result<()> {
    check_boot(&args.boot)?;
    let model = ModelArtifact::load(&args.model)?;
    let (src, tgt) = load_tables(&args.data, &model.schema)?;
    let data = pooled(&src, &tgt, &model.schema)?;
    let score = match args.score.as_str() {
        "posterior" => RocScore::Posterior,
        s => match s.strip_prefix("fixed:") {
            Some(col) if !col.is_empty() => RocScore::Fixed(tgt.numeric_column(col)?),
            _ => bail!("--score must be 'posterior' or 'fixed:<column>', got '{s}'"),
        },
    };
    let grid = args.grid.clone().unwrap_or_else(default_grid);

    // statistic layout: [auc, roc(u_1), ..., roc(u_m)]
    let evaluate = |d: &PooledDataset, xi: &OutcomeModelParams, theta: &TiltParams, target_idx: Option<&[usize]>| -> Result<Vec<f64>> {
        let h = posteriors(d.target(), theta, xi)?;
        let scores = match &score {
            RocScore::Posterior => h.clone(),
            RocScore::Fixed(all) => match target_idx {
                Some(idx) => idx.iter().map(|&j| all[j]).collect(),
                None => all.clone(),
            },
        };
        let e = evaluate_scores(&scores, &h, &grid)?;
        Ok(std::iter::once(e.auc).chain(e.curve.values).collect())
    };
    let point = evaluate(&data, &model.xi, &model.theta, None)?;

    let intervals: Option<Vec<BootstrapResult>> = if args.boot.bootstrap > 0 {
        let values = bootstrap_replicates(data.n1(), data.n0(), args.boot.bootstrap, args.boot.seed, |s, t| {
            let d = data.resample(s, t);
            let (xi, theta) = refit(&d, &model, args.boot.fixed_xi)?;
            evaluate(&d, &xi, &theta, Some(t))
        });
        Some(
            point
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    summarize(p, values.iter().map(|v| v.as_ref().ok().map(|v| v[k])), args.boot.level)
                })
                .collect::<shiftlab::Result<_>>()?,
        )
    } else {
        None
    };
    let interval = |k: usize| intervals.as_ref().map(|iv| Interval::from(&iv[k]));

    let curve: Vec<CurvePoint> = grid
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let iv = interval(i + 1);
            CurvePoint {
                u,
                roc: point[i + 1],
                ci_low: iv.as_ref().map(|b| b.ci_low),
                ci_high: iv.as_ref().map(|b| b.ci_high),
            }
        })
        .collect();
    let auc_iv = interval(0);
    let curve = match &args.out {
        Some(path) => {
            let mut w = csv::Writer::from_writer(output(Some(path))?);
            for p in &curve {
                w.serialize(p)?;
            }
            w.flush()?;
            None
        }
        None => Some(curve),
    };
    let out = RocOutput {
        score: args.score.clone(),
        auc: point[0],
        ci_low: auc_iv.as_ref().map(|b| b.ci_low),
        ci_high: auc_iv.as_ref().map(|b| b.ci_high),
        level: args.boot.level,
        bootstrap: args.boot.bootstrap,
        failures: auc_iv.as_ref().map_or(0, |b| b.failures),
        curve,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let schema = args.schema.schema()?;
    let src = Table::read(&args.source)?;
    let source = crate::data::labeled(&src, &schema)?;
    let target = match &args.target {
        Some(p) => Table::read(p)?.covariates(&schema)?,
        None => source.x.clone(),
    };
    let data = PooledDataset::new(source, target)?;
    let options = identification_options(args.snap_x1);

    let pre = rank_precheck(&data, args.snap_x1);
    let fitted = fit_logistic(data.source(), &LogisticOptions::with_penalty(args.penalty))
        .and_then(|f| f.require_converged());
    let report = match fitted {
        Ok(fit) => check_identification(&data, &fit.params, &options),
        Err(e) if !pre.rank_ok => {
            let mut r = pre;
            r.instrument_ok = false;
            r.overlap_ok = false;
            r.messages.retain(|m| m.starts_with("rank"));
            r.messages.push(format!("outcome model not fitted: {e}"));
            r
        }
        Err(e) => return Err(anyhow!(e).context("outcome model")),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .messages
            .iter()
            .filter(|m| m.contains("fails"))
            .map(String::as_str)
            .collect();
        Err(DiagnosticFailure(failed.join("; ")).into())
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("SHIFTLAB_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow!("SHIFTLAB_THREADS must be a positive integer, got '{v}'"))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
    .and_then(|n| match n {
        Some(0) => bail!("thread count must be positive"),
        n => Ok(n),
    })
}

fn sim_config(args: &SimulateArgs) -> Result<SimConfig> {
    let mut c = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("{}: invalid simulation config", path.display()))?
        }
        None => SimConfig::reference_design(),
    };
    if let Some(v) = args.reps {
        c.reps = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.bootstrap {
        c.bootstrap_b = v;
    }
    if let Some(v) = args.n1 {
        c.n1 = v;
    }
    if let Some(v) = args.n0 {
        c.n0 = v;
    }
    if let Some(v) = args.truth_n {
        c.truth_n = v;
    }
    c.validate()?;
    Ok(c)
}

fn write_domain(path: &Path, data: &LabeledData, with_label: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut header = vec!["x1", "x21", "x22", "x23", "x24"];
    if with_label {
        header.push("y");
    }
    w.write_record(&header)?;
    for (row, &y) in data.x.rows().zip(&data.y) {
        let mut rec: Vec<String> = row.x1.iter().chain(row.x2).map(|v| v.to_string()).collect();
        if with_label {
            rec.push(u8::from(y).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn emit_data(config: &SimConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let rep = gen_replicate(config, StreamKey::new(config.seed).split(0))?;
    write_domain(&dir.join("source.csv"), &rep.source, true)?;
    write_domain(&dir.join("target.csv"), &rep.target, false)?;
    write_domain(&dir.join("target_truth.csv"), &rep.target, true)?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = sim_config(args)?;
    if let Some(n) = thread_count(args.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    if let Some(dir) = &args.emit_data {
        emit_data(&config, dir)?;
        if args.emit_only {
            return Ok(());
        }
    }
    let report = run_study(&config)?;
    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
        for row in &report.rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    print!("{}", report.to_text());
    for f in &report.failures {
        eprintln!("replicate {} failed: {}", f.replicate, f.message);
    }
    Ok(())
}
