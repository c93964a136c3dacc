use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::dgp::{
    gen_domain, gen_replicate, true_source_coefficients, true_source_posterior,
    true_target_posterior, true_tilt, Domain, Replicate,
};
use super::methods::{
    classification_metrics, fit_methods_with, ideal_tilt, Method, MethodFits, REFIT_TOLERANCE,
};
use super::SimConfig;
use crate::bootstrap::{bootstrap_replicates, summarize};
use crate::error::{Error, Result};
use crate::functionals::estimate_iw;
use crate::model::{OutcomeModelParams, TiltParams};
use crate::rng::StreamKey;
use crate::rocauc::evaluate_scores;

/// Seed of the large target sample behind the AUC, ROC and classification
/// truths; fixed so truths do not vary with the study seed.
const TRUTH_SEED: u64 = 0x7472_7574_6873;

const THETA_NAMES: [&str; 4] = ["alpha0", "beta0", "alpha1", "beta1"];

/// Population values the study is scored against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truths {
    pub mu: f64,
    pub theta: TiltParams,
    /// Metrics of the Bayes rule `P0(Y = 1 | x) >= threshold`.
    pub recall: f64,
    pub accuracy: f64,
    pub precision: f64,
    /// AUC and ROC of the true source posterior used as a fixed score.
    pub auc_fixed: f64,
    pub roc_fixed: Vec<f64>,
    /// AUC and ROC of the true target posterior.
    pub auc_est: f64,
    pub roc_est: Vec<f64>,
}

/// Truths from the configuration: `mu` and `theta` exactly, the rest from a
/// labeled target sample of size `truth_n`.
pub fn compute_truths(config: &SimConfig) -> Result<Truths> {
    config.validate()?;
    let theta = true_tilt(config)?;
    let xi = true_source_coefficients(config)?;
    let sample = gen_domain(config, Domain::Target, config.truth_n, StreamKey::new(TRUTH_SEED))?;
    let fixed: Vec<f64> = sample.x.rows().map(|r| true_source_posterior(&xi, r)).collect();
    let bayes: Vec<f64> = sample
        .x
        .rows()
        .map(|r| true_target_posterior(&xi, &theta, r))
        .collect();
    let labels: Vec<f64> = sample.y.iter().map(|&y| y as u8 as f64).collect();
    let predicted: Vec<bool> = bayes.iter().map(|&h| h >= config.threshold).collect();
    let metrics = classification_metrics(&predicted, &sample.y)?;
    let on_fixed = evaluate_scores(&fixed, &labels, &config.roc_u)?;
    let on_bayes = evaluate_scores(&bayes, &labels, &config.roc_u)?;
    Ok(Truths {
        mu: config.pi_target[2] + config.pi_target[3],
        theta,
        recall: metrics.recall.unwrap_or(f64::NAN),
        accuracy: metrics.accuracy,
        precision: metrics.precision.unwrap_or(f64::NAN),
        auc_fixed: on_fixed.auc,
        roc_fixed: on_fixed.curve.values,
        auc_est: on_bayes.auc,
        roc_est: on_bayes.curve.values,
    })
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub metric: String,
    pub truth: f64,
    pub mean: f64,
    /// `100 (mean - truth) / truth`, or the plain bias when `rb_is_absolute`.
    pub rb_percent: f64,
    /// Set when the truth is 0 and `rb_percent` holds the absolute bias.
    pub rb_is_absolute: bool,
    pub mse_x1000: f64,
    /// Fraction of replicates whose bootstrap interval covers the truth.
    pub cp: Option<f64>,
    /// Mean bootstrap interval length.
    pub al: Option<f64>,
    /// Replicates contributing to the row.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub truths: Truths,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<ReplicateFailure>,
}

impl StudyReport {
    pub fn row(&self, method: &str, metric: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, scale: f64| match v {
            Some(x) => format!("{:>9.3}", x * scale),
            None => format!("{:>9}", "-"),
        };
        let mut out = format!(
            "n1 = {}, n0 = {}, replicates = {} ({} failed), bootstrap resamples = {}\n",
            self.config.n1,
            self.config.n0,
            self.config.reps,
            self.failures.len(),
            self.config.bootstrap_b
        );
        let _ = writeln!(
            out,
            "{:<10} {:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "method", "metric", "truth", "mean", "RB(%)", "MSEx1000", "CP(%)", "AL"
        );
        for r in &self.rows {
            let rb = if r.rb_is_absolute {
                format!("{:>8.3}*", r.rb_percent)
            } else {
                format!("{:>9.3}", r.rb_percent)
            };
            let _ = writeln!(
                out,
                "{:<10} {:<16} {:>9.4} {:>9.4} {} {:>9.3} {} {}",
                r.method,
                r.metric,
                r.truth,
                r.mean,
                rb,
                r.mse_x1000,
                opt(r.cp, 100.0),
                opt(r.al, 1.0)
            );
        }
        if self.rows.iter().any(|r| r.rb_is_absolute) {
            out.push_str("* absolute bias (truth is 0)\n");
        }
        for f in &self.failures {
            let _ = writeln!(out, "replicate {} failed: {}", f.replicate, f.message);
        }
        out
    }
}

struct Estimand {
    method: &'static str,
    metric: String,
    truth: f64,
    bootstrap: bool,
}

/// Table layout and the lookup used to fill per-replicate value vectors.
struct Layout {
    estimands: Vec<Estimand>,
    index: HashMap<(&'static str, String), usize>,
}

impl Layout {
    fn new(config: &SimConfig, truths: &Truths) -> Self {
        let mut estimands = Vec::new();
        let boot = |m: Method| m == Method::Proposed || config.bootstrap_all_methods;
        let mut push = |method: &'static str, metric: String, truth: f64, bootstrap: bool| {
            estimands.push(Estimand { method, metric, truth, bootstrap })
        };
        let theta = truths.theta.to_vec();
        for method in ["Proposed", "Ideal"] {
            for (name, t) in THETA_NAMES.iter().zip(&theta) {
                push(method, name.to_string(), *t, true);
            }
        }
        for m in Method::ALL {
            push(m.name(), "recall".into(), truths.recall, false);
            push(m.name(), "accuracy".into(), truths.accuracy, false);
            push(m.name(), "precision".into(), truths.precision, false);
        }
        push("Proposed", "mu_iw".into(), truths.mu, true);
        for m in Method::ALL {
            push(m.name(), "mu_reg".into(), truths.mu, boot(m));
        }
        for (kind, auc, roc) in [
            ("fixed", truths.auc_fixed, &truths.roc_fixed),
            ("est", truths.auc_est, &truths.roc_est),
        ] {
            for m in Method::ALL {
                push(m.name(), format!("auc_{kind}"), auc, boot(m));
                for (u, r) in config.roc_u.iter().zip(roc) {
                    push(m.name(), format!("roc_{kind}@{u}"), *r, boot(m));
                }
            }
        }
        let index = estimands
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.method, e.metric.clone()), i))
            .collect();
        Self { estimands, index }
    }

    fn slot(&self, method: &'static str, metric: &str) -> usize {
        self.index[&(method, metric.to_string())]
    }
}

struct Context<'a> {
    config: &'a SimConfig,
    layout: &'a Layout,
    source_xi: OutcomeModelParams,
}

/// All estimates on one replicate, in layout order. `methods` selects the
/// classifiers fitted; classification metrics need the target labels and are
/// skipped inside the bootstrap.
fn estimate_all(
    ctx: &Context<'_>,
    rep: &Replicate,
    methods: &[Method],
    with_classification: bool,
    warm: Option<&MethodFits>,
) -> Result<(Vec<Option<f64>>, MethodFits)> {
    let layout = ctx.layout;
    let mut values = vec![None; layout.estimands.len()];
    // bootstrap refits are the warm-started ones
    let tolerance = warm.map(|_| REFIT_TOLERANCE);
    let fits = fit_methods_with(rep, methods, warm, tolerance)?;
    for (name, v) in THETA_NAMES.iter().zip(fits.theta.to_vec()) {
        values[layout.slot("Proposed", name)] = Some(v);
    }
    if let Ok(ideal) = ideal_tilt(rep) {
        for (name, v) in THETA_NAMES.iter().zip(ideal.to_vec()) {
            values[layout.slot("Ideal", name)] = Some(v);
        }
    }
    let label = |_: crate::model::Covariates<'_>, y: bool| y as u8 as f64;
    values[layout.slot("Proposed", "mu_iw")] = Some(estimate_iw(label, &rep.source, &fits.theta)?.value);

    let fixed: Vec<f64> = rep
        .target
        .x
        .rows()
        .map(|r| true_source_posterior(&ctx.source_xi, r))
        .collect();
    let n0 = rep.target.len() as f64;
    for &m in methods {
        let model = fits.model(m).expect("requested method was fitted");
        let posteriors = rep
            .target
            .x
            .rows()
            .map(|r| model.posterior(r))
            .collect::<Result<Vec<f64>>>()?;
        let name = m.name();
        values[layout.slot(name, "mu_reg")] = Some(posteriors.iter().sum::<f64>() / n0);
        if with_classification {
            let predicted: Vec<bool> = posteriors.iter().map(|&h| h >= ctx.config.threshold).collect();
            let metrics = classification_metrics(&predicted, &rep.target.y)?;
            values[layout.slot(name, "recall")] = metrics.recall;
            values[layout.slot(name, "accuracy")] = Some(metrics.accuracy);
            values[layout.slot(name, "precision")] = metrics.precision;
        }
        for (kind, scores) in [("fixed", &fixed), ("est", &posteriors)] {
            let eval = evaluate_scores(scores, &posteriors, &ctx.config.roc_u)?;
            values[layout.slot(name, &format!("auc_{kind}"))] = Some(eval.auc);
            for (u, r) in ctx.config.roc_u.iter().zip(&eval.curve.values) {
                values[layout.slot(name, &format!("roc_{kind}@{u}"))] = Some(*r);
            }
        }
    }
    Ok((values, fits))
}

struct ReplicateOutcome {
    values: Vec<Option<f64>>,
    intervals: Vec<Option<(f64, f64)>>,
}

fn run_replicate(ctx: &Context<'_>, r: usize) -> Result<ReplicateOutcome> {
    let config = ctx.config;
    let key = StreamKey::new(config.seed).split(r as u64);
    let rep = gen_replicate(config, key)?;
    let (values, fits) = estimate_all(ctx, &rep, &Method::ALL, true, None)?;
    let mut intervals = vec![None; values.len()];
    if config.bootstrap_b >= 2 {
        let methods: &[Method] = if config.bootstrap_all_methods {
            &Method::ALL
        } else {
            &[Method::Proposed]
        };
        let resampled = bootstrap_replicates(
            config.n1,
            config.n0,
            config.bootstrap_b,
            key.split(2).value(),
            |s, t| {
                estimate_all(ctx, &rep.resample(s, t), methods, false, Some(&fits)).map(|v| v.0)
            },
        );
        for (j, e) in ctx.layout.estimands.iter().enumerate() {
            let Some(point) = values[j] else { continue };
            if !e.bootstrap {
                continue;
            }
            let draws = resampled
                .iter()
                .map(|res| res.as_ref().ok().and_then(|v| v[j]));
            let ci = summarize(point, draws, config.level)?;
            intervals[j] = Some((ci.ci_low, ci.ci_high));
        }
    }
    Ok(ReplicateOutcome { values, intervals })
}

/// Runs `config.reps` independent replicates in parallel and aggregates them
/// in replicate order, so the report does not depend on the thread count.
pub fn run_study(config: &SimConfig) -> Result<StudyReport> {
    config.validate()?;
    let truths = compute_truths(config)?;
    let layout = Layout::new(config, &truths);
    let ctx = Context {
        config,
        layout: &layout,
        source_xi: true_source_coefficients(config)?,
    };
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_replicate(&ctx, r))
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => failures.push(ReplicateFailure {
                replicate: r,
                message: e.to_string(),
            }),
        }
    }
    if ok.is_empty() {
        return Err(Error::TooManyFailures {
            failures: failures.len(),
            total: config.reps,
        });
    }
    let rows = layout
        .estimands
        .iter()
        .enumerate()
        .map(|(j, e)| aggregate(e, ok.iter().map(|o| (o.values[j], o.intervals[j])), config.reps > 1))
        .collect();
    Ok(StudyReport {
        config: config.clone(),
        truths,
        rows,
        failures,
    })
}

fn aggregate(
    e: &Estimand,
    draws: impl Iterator<Item = (Option<f64>, Option<(f64, f64)>)>,
    with_intervals: bool,
) -> MetricsRow {
    let mut values = Vec::new();
    let mut intervals = Vec::new();
    for (v, ci) in draws {
        if let Some(v) = v {
            values.push(v);
            if let Some(ci) = ci {
                intervals.push(ci);
            }
        }
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mse = values.iter().map(|v| (v - e.truth).powi(2)).sum::<f64>() / n as f64;
    let rb_is_absolute = e.truth == 0.0;
    let rb_percent = if rb_is_absolute {
        mean - e.truth
    } else {
        100.0 * (mean - e.truth) / e.truth
    };
    let (cp, al) = if with_intervals && e.bootstrap && !intervals.is_empty() {
        let m = intervals.len() as f64;
        let hits = intervals
            .iter()
            .filter(|(lo, hi)| *lo <= e.truth && e.truth <= *hi)
            .count();
        (
            Some(hits as f64 / m),
            Some(intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / m),
        )
    } else {
        (None, None)
    };
    MetricsRow {
        method: e.method.to_string(),
        metric: e.metric.clone(),
        truth: e.truth,
        mean,
        rb_percent,
        rb_is_absolute,
        mse_x1000: 1000.0 * mse,
        cp,
        al,
        n,
    }
}
