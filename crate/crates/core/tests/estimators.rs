//! End-to-end properties of the estimators on the simulation design.

use shiftlab::functionals::{estimate_iw, estimate_target_mean, FunctionalMethod};
use shiftlab::pipeline::{fit_two_step, PipelineOptions};
use shiftlab::rng::StreamKey;
use shiftlab::simlab::{
    gen_domain, gen_replicate, run_study, true_tilt, Domain, SimConfig,
};
use shiftlab::{CovariateMatrix, Covariates, LabeledData, PooledDataset};

fn design(n: usize) -> SimConfig {
    SimConfig {
        n1: n,
        n0: n,
        ..SimConfig::reference_design()
    }
}

fn map_x2(x: &CovariateMatrix, f: impl Fn(&[f64]) -> Vec<f64>) -> CovariateMatrix {
    let mut out = CovariateMatrix::new(x.d(), x.q()).unwrap();
    for row in x.rows() {
        let x2 = f(row.x2);
        out.push(Covariates { x1: row.x1, x2: &x2 }).unwrap();
    }
    out
}

#[test]
fn tilt_is_invariant_to_affine_changes_of_x2() {
    let rep = gen_replicate(&design(2000), StreamKey::new(3)).unwrap();
    let data = rep.pooled().unwrap();
    let affine = |v: &[f64]| -> Vec<f64> {
        vec![3.0 * v[0] - 1.0, -0.5 * v[1] + 4.0, v[2] + v[1], 10.0 * v[3] + 2.0]
    };
    let moved = PooledDataset::new(
        LabeledData::new(map_x2(&data.source().x, affine), data.source().y.clone()).unwrap(),
        map_x2(data.target(), affine),
    )
    .unwrap();
    let a = fit_two_step(&data, &PipelineOptions::default()).unwrap();
    let b = fit_two_step(&moved, &PipelineOptions::default()).unwrap();
    for (u, v) in a.theta().to_vec().iter().zip(b.theta().to_vec()) {
        assert!((u - v).abs() < 1e-6, "{:?} vs {:?}", a.theta(), b.theta());
    }
}

#[test]
fn iw_and_reg_agree_in_large_samples() {
    let rep = gen_replicate(&design(20_000), StreamKey::new(17)).unwrap();
    let data = rep.pooled().unwrap();
    let fit = fit_two_step(&data, &PipelineOptions::default()).unwrap();
    let iw = estimate_target_mean(&data, fit.theta(), fit.xi(), FunctionalMethod::Iw).unwrap();
    let reg = estimate_target_mean(&data, fit.theta(), fit.xi(), FunctionalMethod::Reg).unwrap();
    assert!((iw.value - reg.value).abs() < 0.01, "iw {} reg {}", iw.value, reg.value);
    assert!((reg.value - 0.4).abs() < 0.02, "{}", reg.value);
}

#[test]
fn iw_with_the_true_tilt_is_unbiased() {
    // a bounded h mixing the label with a feature: E0[y * 1{x22 > -1}]
    let c = design(1000);
    let theta = true_tilt(&c).unwrap();
    let h = |x: Covariates<'_>, y: bool| if y && x.x2[1] > -1.0 { 1.0 } else { 0.0 };

    let truth_sample = gen_domain(&c, Domain::Target, 1_000_000, StreamKey::new(99)).unwrap();
    let truth = truth_sample
        .x
        .rows()
        .zip(&truth_sample.y)
        .map(|(x, &y)| h(x, y))
        .sum::<f64>()
        / truth_sample.len() as f64;

    let reps = 500;
    let values: Vec<f64> = (0..reps)
        .map(|r| {
            let source: LabeledData =
                gen_domain(&c, Domain::Source, c.n1, StreamKey::new(5).split(r)).unwrap();
            estimate_iw(h, &source, &theta).unwrap().value
        })
        .collect();
    let mean = values.iter().sum::<f64>() / reps as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    // the truth itself carries Monte Carlo error from its million draws
    let se = (var / reps as f64 + truth * (1.0 - truth) / 1e6).sqrt();
    assert!((mean - truth).abs() < 3.0 * se, "mean {mean} truth {truth} se {se}");
}

#[test]
fn without_shift_the_methods_classify_alike() {
    let mut c = design(2000);
    c.pi_target = c.pi_source;
    c.reps = 200;
    c.bootstrap_b = 0;
    c.truth_n = 200_000;
    let report = run_study(&c).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let acc = |m| report.row(m, "accuracy").unwrap().mean;
    let naive = acc("Naive");
    for m in ["Proposed", "Reweight"] {
        assert!((acc(m) - naive).abs() < 0.01, "{m} {} vs Naive {naive}", acc(m));
    }
    let theta = report.row("Proposed", "alpha0").unwrap();
    assert_eq!(theta.truth, 0.0);
    assert!(theta.rb_is_absolute);
}
