use std::path::Path;
use std::process::{Command, Output};

fn kqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kqr"))
        .args(args)
        .output()
        .expect("kqr runs")
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn alpha_prints_value_and_term() {
    let out = kqr(&["rates", "alpha", "--r", "0.5", "--beta", "1", "--theta", "1", "--zeta", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("alpha = 0.333 (term 3)\n"), "{stdout}");
    // the resolved configuration goes to stderr
    assert!(String::from_utf8(out.stderr).unwrap().contains("Alpha"));
}

#[test]
fn tables_and_curve_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    for (which, name) in [("1", "table1.csv"), ("2", "table2.csv")] {
        let path = dir.path().join(name);
        let out = kqr(&["rates", "table", "--which", which, "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(std::fs::read_to_string(&path).unwrap(), golden(name));
    }
    let out = kqr(&["rates", "table", "--which", "2"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("table2.csv"));

    let path = dir.path().join("curve.csv");
    let out = kqr(&[
        "rates", "curve", "--r", "0.5", "--theta", "0.5", "--zeta", "1", "--alpha-smooth", "1", "--d-max", "10",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), golden("curve.csv"));
}

#[test]
fn verify_reports_have_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["lemma2", "example1", "approx", "solver"] {
        let path = dir.path().join(format!("{suite}.csv"));
        let out = kqr(&["verify", suite, "--seed", "3", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{suite}");
        assert_eq!(first_line(&path), "case,lhs,rhs,pass");
    }
    let path = dir.path().join("cap.csv");
    let out = kqr(&["verify", "capacity", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(first_line(&path), "eps,block_id,log_count,bound,pass");
    assert_eq!(first_line(&dir.path().join("cap_coverage.csv")), "case,lhs,rhs,pass");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",additive,")).count(), 3);
}

#[test]
fn example1_report_shows_series_above_bound() {
    let out = kqr(&["verify", "example1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().find(|l| l.starts_with("series_M10000,")).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    let (s, lb): (f64, f64) = (cols[1].parse().unwrap(), cols[2].parse().unwrap());
    assert!(s >= lb);
    assert_eq!(cols[3], "true");
}

#[test]
fn exit_codes() {
    // input errors
    assert_eq!(kqr(&["rates", "alpha", "--r", "0.7", "--beta", "1", "--theta", "1", "--zeta", "1"]).status.code(), Some(2));
    assert_eq!(kqr(&["rates", "table", "--which", "3"]).status.code(), Some(2));
    assert_eq!(kqr(&["rates", "alpha", "--bogus", "1"]).status.code(), Some(2));
    assert_eq!(kqr(&["fit", "--data", "/nonexistent.csv", "--kernel", "k.json", "--lambda", "1", "--tau", "0.5", "--out", "m.json"]).status.code(), Some(2));
    // an impossible capacity constant fails verification
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cap.csv");
    let out = kqr(&["verify", "capacity", "--c-zeta", "1e-6", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_predict_round_trip_and_convergence_exit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut csv = String::from("x1,x2,y\n");
    for i in 0..30 {
        let (a, b) = (i as f64 / 30.0, ((i * 11) % 30) as f64 / 30.0);
        csv.push_str(&format!("{a},{b},{}\n", (3.0 * a).sin() - b));
    }
    std::fs::write(&data, csv).unwrap();
    let kernel = dir.path().join("kernel.json");
    std::fs::write(
        &kernel,
        r#"{"type":"additive","dims":[1,1],"components":[{"type":"gaussian","sigma":0.5},{"type":"sobolev_min"}]}"#,
    )
    .unwrap();
    let model = dir.path().join("model.json");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let out = kqr(&[
        "fit", "--data", &p(&data), "--kernel", &p(&kernel), "--lambda", "0.01", "--tau", "0.3", "--out", &p(&model),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&model).unwrap();
    for key in ["kernel", "dims", "support", "alpha", "lambda", "tau", "gap"] {
        assert!(text.contains(&format!("\"{key}\"")));
    }

    let preds = dir.path().join("preds.csv");
    let out = kqr(&["predict", "--model", &p(&model), "--data", &p(&data), "--out", &p(&preds)]);
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<String> = std::fs::read_to_string(&preds).unwrap().lines().map(String::from).collect();
    assert_eq!(lines[0], "x1,x2,prediction");
    assert_eq!(lines.len(), 31);

    let out = kqr(&[
        "fit", "--data", &p(&data), "--kernel", &p(&kernel), "--lambda", "0.0001", "--tau", "0.3", "--out", &p(&model),
        "--gap-tol", "1e-15", "--max-epochs", "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn experiment_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(
        &config,
        r#"{
          "layout": [1, 1],
          "target": [{"type": "sinusoid", "amplitude": 0.5, "frequency": 1.0},
                     {"type": "polynomial", "coefficients": [0.0, 1.0]}],
          "noise": {"kind": "uniform_symmetric", "halfwidth": 0.5},
          "tau": 0.5,
          "kernel_a": {"type": "additive", "dims": [1, 1],
                       "components": [{"type": "gaussian", "sigma": 0.5}, {"type": "gaussian", "sigma": 0.5}]},
          "n_grid": [20, 40, 80],
          "beta": 1.0,
          "seeds": [0, 1],
          "risk_eval": 100
        }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = kqr(&["experiment", "--config", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(first_line(&out_dir.join("results.csv")), "kernel,n,seed,excess,lambda,gap");
    assert_eq!(first_line(&out_dir.join("summary.csv")), "kernel,slope,intercept,r2");
    assert_eq!(first_line(&out_dir.join("raw_excess.csv")), "kernel,n,seed,excess_raw");
    assert_eq!(std::fs::read_to_string(out_dir.join("results.csv")).unwrap().lines().count(), 7);

    std::fs::write(&config, r#"{"layout": [1]}"#).unwrap();
    let out = kqr(&["experiment", "--config", config.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
