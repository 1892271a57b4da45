//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if
//! any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kqr::experiments::example1_series;
use kqr::rates::{alpha_general, alpha_quantile, beta_quantile, rate_terms, table1, Pavg, RateParams};
use kqr::suites::{approx_suite, capacity_suite, example1_suite, lemma2_suite, solver_suite, CaseRow};

/// Published large-dimension limits, row order `r x theta x zeta` as in
/// `rates::table2`.
const TABLE2_PUBLISHED: [(f64, f64, f64, f64); 27] = [
    (0.5, 1.0, 0.1, 0.5),
    (0.5, 1.0, 1.0, 0.333),
    (0.5, 1.0, 1.9, 0.026),
    (0.5, 0.5, 0.1, 0.311),
    (0.5, 0.5, 1.0, 0.143),
    (0.5, 0.5, 1.9, 0.013),
    (0.5, 0.1, 0.1, 0.05),
    (0.5, 0.1, 1.0, 0.026),
    (0.5, 0.1, 1.9, 0.003),
    (0.25, 1.0, 0.1, 0.25),
    (0.25, 1.0, 1.0, 0.25),
    (0.25, 1.0, 1.9, 0.026),
    (0.25, 0.5, 0.1, 0.25),
    (0.25, 0.5, 1.0, 0.143),
    (0.25, 0.5, 1.9, 0.013),
    (0.25, 0.1, 0.1, 0.05),
    (0.25, 0.1, 1.0, 0.026),
    (0.25, 0.1, 1.9, 0.003),
    (0.1, 1.0, 0.1, 0.1),
    (0.1, 1.0, 1.0, 0.1),
    (0.1, 1.0, 1.9, 0.026),
    (0.1, 0.5, 0.1, 0.1),
    (0.1, 0.5, 1.0, 0.1),
    (0.1, 0.5, 1.9, 0.013),
    (0.1, 0.1, 0.1, 0.05),
    (0.1, 0.1, 1.0, 0.026),
    (0.1, 0.1, 1.9, 0.003),
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn failures(rows: &[CaseRow]) -> Vec<&CaseRow> {
    rows.iter().filter(|r| !r.pass).collect()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).expect("csv readable");
    rdr.records()
        .map(|r| r.expect("csv record").iter().map(str::to_string).collect())
        .collect()
}

fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["kqr"];
    argv.extend_from_slice(args);
    kqr::cli::run(argv)
}

fn criterion1(dir: &Path) -> Verdict {
    let out = dir.join("table2.csv");
    let code = run_cli(&["rates", "table", "--which", "2", "--out", out.to_str().unwrap()]);
    let header = csv::Reader::from_path(&out).unwrap().headers().unwrap().clone();
    let rows = read_csv(&out);
    if code != 0 || rows.len() != 27 || header.iter().collect::<Vec<_>>() != ["r", "theta", "zeta", "alpha"] {
        return verdict(false, format!("exit {code}, {} rows, header {header:?}", rows.len()));
    }
    let mut worst: f64 = 0.0;
    for (row, &(r, t, z, published)) in rows.iter().zip(&TABLE2_PUBLISHED) {
        let vals: Vec<f64> = row.iter().map(|s| s.parse().unwrap()).collect();
        if vals[0] != r || vals[1] != t || vals[2] != z {
            return verdict(false, format!("row order mismatch at {row:?}"));
        }
        worst = worst.max((vals[3] - published).abs());
    }
    verdict(worst <= 5e-4, format!("27 rows, max |computed - published| = {worst:.3e}"))
}

fn criterion2() -> Verdict {
    let mut worst: f64 = 0.0;
    for &r in &[0.1, 0.25, 0.5] {
        let a = |theta: f64, zeta: f64| alpha_general(&RateParams::new(r, 1.0, theta, zeta).unwrap()).unwrap().value;
        worst = worst.max((a(1.0, 1.0) - r.min(1.0 / 3.0)).abs());
        worst = worst.max((a(1.0, 1.5) - r.min(1.0 / 7.0)).abs());
        worst = worst.max((a(0.5, 1.0) - r.min(1.0 / 7.0)).abs());
        for zeta in [0.1, 1.0, 1.9] {
            worst = worst.max(a(0.0, zeta).abs());
        }
        for theta in [0.0, 0.5, 1.0] {
            worst = worst.max(a(theta, 2.0 - 1e-9).abs());
        }
    }
    let positive = table1()
        .unwrap()
        .iter()
        .filter(|row| row.expected.is_none())
        .all(|row| row.additive == kqr::rates::LimitValue::Positive);
    verdict(
        worst <= 1e-6 && positive,
        format!("max deviation {worst:.3e}; positive row confirmed on grid: {positive}"),
    )
}

fn criterion3() -> Verdict {
    let mut worst: f64 = 0.0;
    for p in [Pavg::Finite(1.0), Pavg::Finite(2.0), Pavg::Finite(5.0), Pavg::Finite(10.0), Pavg::Finite(100.0), Pavg::Infinite] {
        let theta = p.ratio();
        let beta = beta_quantile(p).unwrap();
        let target = alpha_quantile(p).unwrap();
        let params = RateParams::new(0.5, beta, theta, 1e-6).unwrap();
        for t in rate_terms(&params) {
            worst = worst.max((t - target).abs());
        }
    }
    verdict(worst <= 1e-5, format!("max |term - 2(p+1)/(3(p+2))| = {worst:.3e}"))
}

fn rows_verdict(rows: &[CaseRow], label: &str) -> Verdict {
    let bad = failures(rows);
    let worst = rows.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad.is_empty(),
        format!(
            "{} {label}, {} violations, max lhs - rhs = {worst:.3e}{}",
            rows.len(),
            bad.len(),
            bad.first().map_or_else(String::new, |r| format!(", first: {}", r.case))
        ),
    )
}

fn criterion6() -> Verdict {
    let rows = solver_suite(0).unwrap();
    let count = |p: &str| rows.iter().filter(|r| r.case.starts_with(p)).count();
    let bad = failures(&rows);
    let max_gap = rows
        .iter()
        .filter(|r| r.case.starts_with("gap_"))
        .map(|r| r.lhs)
        .fold(0.0, f64::max);
    let oracle_excess = rows
        .iter()
        .filter(|r| r.case.starts_with("oracle_"))
        .map(|r| r.lhs - r.rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad.is_empty(),
        format!(
            "{} oracle (max primal - grid dual {oracle_excess:.2e}), {} gap (max {max_gap:.2e}), {} norm-bound cases; {} violations",
            count("oracle_"),
            count("gap_"),
            count("norm_"),
            bad.len()
        ),
    )
}

fn criterion7() -> Verdict {
    let v = capacity_suite(0, None, 1.0).unwrap();
    let covered = v.coverage.iter().all(|r| r.pass);
    let worst: Vec<String> = v.coverage.iter().map(|r| format!("{:.3}/{}", r.lhs, r.rhs)).collect();
    verdict(
        covered && v.report.construction,
        format!(
            "1000 draws, worst distance / 2eps: {}; count identity exact: {}",
            worst.join(", "),
            v.report.construction
        ),
    )
}

fn criterion8() -> Verdict {
    let rows = example1_suite().unwrap();
    let norm = rows.iter().find(|r| r.case == "additive_norm").unwrap().lhs;
    let (s, _) = example1_series(10_000);
    verdict(
        failures(&rows).is_empty() && norm == 1.0,
        format!("additive norm {norm}, S_10000 = {s:.3}, all M <= 10^4 above the bound"),
    )
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/rates_d4.json")
}

fn run_experiment(dir: &Path) -> (i32, Vec<Vec<String>>, Vec<Vec<String>>) {
    let code = run_cli(&[
        "experiment",
        "--config",
        config_path().to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    (code, read_csv(&dir.join("results.csv")), read_csv(&dir.join("summary.csv")))
}

fn criterion9(dir: &Path) -> Verdict {
    let spec = kqr::experiments::ExperimentSpec::from_json_path(config_path()).unwrap();
    let (code, results, summary) = run_experiment(dir);
    let slope = |k: &str| -> f64 {
        summary
            .iter()
            .find(|r| r[0] == k)
            .map(|r| r[1].parse().unwrap())
            .unwrap_or(f64::NAN)
    };
    let (a, b) = (slope("kernel_a"), slope("kernel_b"));
    let floor = -3.0 / (spec.risk_eval as f64).sqrt();
    let nonneg = results.iter().all(|r| r[3].parse::<f64>().unwrap() >= floor);
    let complete = results.len() == 2 * spec.n_grid.len() * spec.seeds.len();
    verdict(
        code == 0 && complete && a <= -0.3 && a <= b + 0.05 && nonneg,
        format!("additive slope {a:.3}, product slope {b:.3}, {} jobs, excess >= MC floor: {nonneg}", results.len()),
    )
}

fn criterion10(first: &Path, second: &Path) -> Verdict {
    let (code, _, _) = run_experiment(second);
    let a = std::fs::read(first.join("results.csv")).unwrap();
    let b = std::fs::read(second.join("results.csv")).unwrap();
    verdict(code == 0 && a == b, format!("results.csv {} bytes, identical: {}", a.len(), a == b))
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> (Verdict, Duration, bool) {
    let start = Instant::now();
    let v = f();
    let took = start.elapsed();
    (v, took, took < limit)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let run1 = tmp.path().join("run1");
    let run2 = tmp.path().join("run2");
    let secs = Duration::from_secs;

    type Check<'a> = (u32, &'a str, Duration, Box<dyn FnOnce() -> Verdict + 'a>);
    let checks: Vec<Check> = vec![
        (1, "Table 2 reproduction", secs(1), Box::new(|| criterion1(tmp.path()))),
        (2, "Table 1 limits", secs(1), Box::new(criterion2)),
        (3, "quantile schedule equalizes the five terms", secs(1), Box::new(criterion3)),
        (4, "source-condition inequality on 100 configurations", secs(10), Box::new(|| {
            rows_verdict(&lemma2_suite(0, 100).unwrap(), "configurations")
        })),
        (5, "approximation error bound on 10 additive problems", secs(60), Box::new(|| {
            rows_verdict(&approx_suite(0, 10).unwrap(), "(problem, lambda) cases")
        })),
        (6, "solver correctness", secs(60), Box::new(criterion6)),
        (7, "product-net covering construction", secs(60), Box::new(criterion7)),
        (8, "Gaussian additive vs product membership", secs(1), Box::new(criterion8)),
        (9, "empirical rates, additive vs product", secs(30 * 60), Box::new(|| criterion9(&run1))),
        (10, "determinism of the rate experiment", secs(30 * 60), Box::new(|| criterion10(&run1, &run2))),
    ];

    let mut all = true;
    for (id, name, limit, check) in checks {
        let (v, took, in_time) = timed(limit, check);
        let pass = v.pass && in_time;
        all &= pass;
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.2} s, limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if !all {
        std::process::exit(1);
    }
}
