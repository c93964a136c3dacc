use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SCHEMA: [&str; 6] = [
    "--group-cols",
    "x1",
    "--feature-cols",
    "x21,x22,x23,x24",
    "--label-col",
    "y",
];

fn shiftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftlab"))
        .args(args)
        .env_remove("SHIFTLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulated CSVs for replicate 0 of a small design.
fn emit(dir: &Path, n: usize) -> std::path::PathBuf {
    let data = dir.join("data");
    let n = n.to_string();
    let o = shiftlab(&[
        "simulate", "--paper-defaults", "--n1", &n, "--n0", &n, "--seed", "11",
        "--emit-data", p(&data), "--emit-only",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn fit(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let src = data.join("source.csv");
    let tgt = data.join("target.csv");
    let mut args = vec!["fit", "--source", p(&src), "--target", p(&tgt), "--out", p(out)];
    args.extend(SCHEMA);
    args.extend(extra);
    shiftlab(&args)
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn fit_on_emitted_data_writes_a_converged_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 2000);
    let header = std::fs::read_to_string(data.join("source.csv")).unwrap();
    assert!(header.starts_with("x1,x21,x22,x23,x24,y\n"));

    let model = dir.path().join("model.json");
    let o = fit(&data, &model, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("identification: rank ok"));

    let m = json(&std::fs::read_to_string(&model).unwrap());
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["diagnostics"]["outcome_converged"], true);
    assert_eq!(m["diagnostics"]["tilt_converged"], true);
    let theta = [
        m["theta"]["alpha0"].as_f64().unwrap(),
        m["theta"]["beta0"][0].as_f64().unwrap(),
        m["theta"]["alpha1"].as_f64().unwrap(),
        m["theta"]["beta1"][0].as_f64().unwrap(),
    ];
    let truth = [5f64.ln(), 0.05f64.ln(), 0.25f64.ln(), 12f64.ln()];
    for (a, b) in theta.iter().zip(truth) {
        assert!((a - b).abs() < 0.6, "{theta:?}");
    }
    assert!(m["xi"]["xi1"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().is_finite()));

    // same inputs, same bytes
    let again = dir.path().join("again.json");
    assert!(fit(&data, &again, &[]).status.success());
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn missing_target_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 200);
    let src = data.join("source.csv");
    let out = dir.path().join("m.json");
    let mut args = vec!["fit", "--source", p(&src), "--out", p(&out)];
    args.extend(SCHEMA);
    let o = shiftlab(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--target"), "{}", stderr(&o));

    let o = shiftlab(&["fit", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

fn constant_group(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let src = dir.join("src.csv");
    let tgt = dir.join("tgt.csv");
    let mut s = String::from("x1,x21,x22,x23,x24,y\n");
    let mut t = String::from("x1,x21,x22,x23,x24\n");
    for i in 0..40 {
        let v = i as f64 / 10.0;
        s += &format!("1,{v},{},{},{},{}\n", (v * 1.7).sin(), i % 2, v * v, i % 3 == 0);
        t += &format!("1,{},{v},{},{}\n", -v, i % 2, v);
    }
    std::fs::write(&src, s).unwrap();
    std::fs::write(&tgt, t).unwrap();
    (src, tgt)
}

#[test]
fn constant_group_column_is_a_diagnostic_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = constant_group(dir.path());
    let out = dir.path().join("m.json");
    let mut args = vec!["fit", "--source", p(&src), "--target", p(&tgt), "--out", p(&out), "--strict"];
    args.extend(SCHEMA);
    let o = shiftlab(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank condition"), "{}", stderr(&o));
    assert!(!out.exists());

    let mut args = vec!["diagnose", "--source", p(&src), "--target", p(&tgt)];
    args.extend(SCHEMA);
    let o = shiftlab(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report = json(&stdout(&o));
    assert_eq!(report["rank_ok"], false);
    assert_eq!(report["distinct_x1_points"], 1);
}

#[test]
fn diagnose_passes_on_simulated_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 500);
    let src = data.join("source.csv");
    let mut args = vec!["diagnose", "--source", p(&src)];
    args.extend(SCHEMA);
    let o = shiftlab(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&stdout(&o));
    assert_eq!(report["rank_ok"], true);
    assert_eq!(report["instrument_ok"], true);
    assert_eq!(report["overlap_ok"], true);
}

#[test]
fn malformed_cells_are_reported_with_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 100);
    let text = std::fs::read_to_string(data.join("target.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let fields: Vec<&str> = lines[3].split(',').collect();
    lines[3] = format!("{},abc,{}", fields[0], fields[2..].join(","));
    std::fs::write(data.join("target.csv"), lines.join("\n") + "\n").unwrap();
    let o = fit(&data, &dir.path().join("m.json"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("column 'x21'") && err.contains("abc"), "{err}");
}

#[test]
fn predict_mean_and_roc_run_on_a_fitted_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 400);
    let model = dir.path().join("model.json");
    assert!(fit(&data, &model, &[]).status.success());
    let src = data.join("source.csv");
    let tgt = data.join("target.csv");

    let pred = dir.path().join("pred.csv");
    let o = shiftlab(&["predict", "--model", p(&model), "--input", p(&tgt), "--out", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("posterior,label"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 400);
    for r in rows {
        let (h, label) = r.split_once(',').unwrap();
        let h: f64 = h.parse().unwrap();
        assert!((0.0..=1.0).contains(&h));
        assert_eq!(label == "1", h >= 0.5);
    }

    let mean = |extra: &[&str]| {
        let mut args = vec!["mean", "--model", p(&model), "--source", p(&src), "--target", p(&tgt)];
        args.extend(extra);
        let o = shiftlab(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        json(&stdout(&o))
    };
    let reg = mean(&["--bootstrap", "40", "--seed", "5"]);
    let est = reg["estimate"].as_f64().unwrap();
    assert!((est - 0.4).abs() < 0.1, "{reg}");
    assert!(reg["ci_low"].as_f64().unwrap() <= est && est <= reg["ci_high"].as_f64().unwrap());
    assert_eq!(reg, mean(&["--bootstrap", "40", "--seed", "5"]));
    let iw = mean(&["--method", "iw"]);
    assert!(iw["ci_low"].is_null());
    assert!((iw["estimate"].as_f64().unwrap() - est).abs() < 0.1);
    let complement = mean(&["--label-value", "0"]);
    assert!((complement["estimate"].as_f64().unwrap() + est - 1.0).abs() < 1e-12);
    let fixed = mean(&["--bootstrap", "40", "--seed", "5", "--fixed-xi"]);
    assert_eq!(fixed["estimate"], reg["estimate"]);

    let curve = dir.path().join("roc.csv");
    let o = shiftlab(&[
        "roc", "--model", p(&model), "--source", p(&src), "--target", p(&tgt),
        "--score", "fixed:x22", "--grid", "0.1,0.2,0.5", "--bootstrap", "30", "--out", p(&curve),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let auc = json(&stdout(&o));
    assert!(auc["curve"].is_null());
    // x22 is shifted down for positives, so it ranks them below negatives
    let a = auc["auc"].as_f64().unwrap();
    assert!(a < 0.5, "{auc}");
    assert!(auc["ci_low"].as_f64().unwrap() <= a && a <= auc["ci_high"].as_f64().unwrap());
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("u,roc,ci_low,ci_high\n"), "{text}");
    assert_eq!(text.lines().count(), 4);

    let o = shiftlab(&[
        "roc", "--model", p(&model), "--source", p(&src), "--target", p(&tgt), "--grid", "0.1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let auc = json(&stdout(&o));
    assert!(auc["auc"].as_f64().unwrap() > 0.8);
    assert_eq!(auc["curve"].as_array().unwrap().len(), 1);

    let o = shiftlab(&[
        "roc", "--model", p(&model), "--source", p(&src), "--target", p(&tgt), "--score", "fixed:",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_file_input_with_domain_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 300);
    let src = std::fs::read_to_string(data.join("source.csv")).unwrap();
    let tgt = std::fs::read_to_string(data.join("target.csv")).unwrap();
    let mut all = String::from("x1,x21,x22,x23,x24,y,domain\n");
    for l in src.lines().skip(1) {
        all += &format!("{l},source\n");
    }
    for l in tgt.lines().skip(1) {
        all += &format!("{l},,target\n");
    }
    let file = dir.path().join("all.csv");
    std::fs::write(&file, all).unwrap();

    let joint = dir.path().join("joint.json");
    let mut args = vec!["fit", "--data", p(&file), "--domain-col", "domain", "--out", p(&joint)];
    args.extend(SCHEMA);
    let o = shiftlab(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    let split = dir.path().join("split.json");
    assert!(fit(&data, &split, &[]).status.success());
    let a = json(&std::fs::read_to_string(&joint).unwrap());
    let b = json(&std::fs::read_to_string(&split).unwrap());
    assert_eq!(a["theta"], b["theta"]);
    assert_eq!(a["xi"], b["xi"]);
}

#[test]
fn ridge_and_multistart_options() {
    let dir = tempfile::tempdir().unwrap();
    let data = emit(dir.path(), 300);
    let model = dir.path().join("ridge.json");
    let o = fit(&data, &model, &["--ridge-grid", "0,0.1,1", "--folds", "3", "--starts", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&std::fs::read_to_string(&model).unwrap());
    assert_eq!(m["diagnostics"]["ridge"]["cv_loss"].as_array().unwrap().len(), 3);
    assert_eq!(m["settings"]["starts"], 3);

    let o = fit(&data, &model, &["--ridge-grid", "0,1", "--standardize"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_tables_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    std::fs::write(
        &config,
        r#"{"pi_source": [0.1, 0.4, 0.4, 0.1], "pi_target": [0.5, 0.1, 0.1, 0.3],
            "gamma": [7, -3], "sigma": [2, 2], "lambda": 1,
            "n1": 300, "n0": 300, "reps": 4, "seed": 9, "bootstrap_b": 20, "truth_n": 20000}"#,
    )
    .unwrap();
    let run = |threads: &str, tag: &str| {
        let out = dir.path().join(format!("table{tag}.csv"));
        let report = dir.path().join(format!("report{tag}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_shiftlab"))
            .args(["simulate", "--config", p(&config), "--out", p(&out), "--json", p(&report)])
            .env("SHIFTLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("Proposed"));
        (std::fs::read_to_string(out).unwrap(), std::fs::read_to_string(report).unwrap())
    };
    let (table, report) = run("1", "a");
    assert!(table.starts_with("method,metric,truth,mean,rb_percent"), "{table}");
    assert!(table.contains("Proposed,mu_reg"));
    let r = json(&report);
    assert_eq!(r["config"]["reps"], 4);
    assert_eq!(r["truths"]["mu"].as_f64().unwrap(), 0.4);
    assert_eq!((table, report), run("3", "b"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"reps": 1, "unexpected": true}"#).unwrap();
    assert_eq!(shiftlab(&["simulate", "--config", p(&bad)]).status.code(), Some(1));
    assert_eq!(shiftlab(&["simulate"]).status.code(), Some(1));
}
