//! `kqr` command line.
//!
//! Exit codes: 0 on success, 1 when a verification fails, 2 on input
//! errors, 3 when the solver does not converge. Every run echoes its
//! resolved configuration to stderr. Randomness defaults to seed 0.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::experiments::{rate_experiment, write_outcome, ExperimentSpec};
use crate::kernels::KernelSpec;
use crate::rates::{alpha_general, figure_curve, table1, table2, RateParams};
use crate::solver::{fit, predict_all, FitOptions, Model};
use crate::suites::{
    all_pass, approx_suite, capacity_suite, example1_suite, lemma2_suite, solver_suite, write_capacity_csv,
    write_case_csv,
};

#[derive(Debug, Parser)]
#[command(name = "kqr", version, about = "Kernel quantile regression with additive kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learning-rate exponents, tables and curves.
    Rates {
        #[command(subcommand)]
        command: RatesCommand,
    },
    /// Fit a quantile SVM to a CSV sample.
    Fit(FitArgs),
    /// Evaluate a fitted model on the inputs of a CSV file.
    Predict(PredictArgs),
    /// Run an empirical learning-rate experiment.
    Experiment(ExperimentArgs),
    /// Run a verification suite and write a pass/fail report.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
enum RatesCommand {
    /// Large-dimension tables (1: limits, 2: the 27-value grid).
    Table {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        which: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The general exponent and the index of its active term.
    Alpha {
        #[arg(long)]
        r: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        zeta: f64,
    },
    /// Additive vs single-kernel exponents over the dimension.
    Curve {
        #[arg(long)]
        r: f64,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        zeta: f64,
        #[arg(long)]
        alpha_smooth: f64,
        #[arg(long)]
        d_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Kernel specification (JSON).
    #[arg(long)]
    kernel: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FitOptions::default().gap_tol)]
    gap_tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Lemma2,
    Capacity,
    Approx,
    Example1,
    Solver,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Capacity constant; fitted to the block rows when omitted.
    #[arg(long)]
    c_zeta: Option<f64>,
    /// Capacity exponent.
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
}

/// Result of a command that ran to completion.
enum Outcome {
    Done,
    Failed,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout()),
    })
}

/// Parses `argv` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    eprintln!("config: {:?}", cli.command);
    match execute(cli.command) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::Failed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Convergence { .. } => 3,
                _ => 2,
            }
        }
    }
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Rates { command } => rates(command),
        Command::Fit(args) => fit_cmd(args),
        Command::Predict(args) => predict_cmd(args),
        Command::Experiment(args) => experiment_cmd(args),
        Command::Verify(args) => verify_cmd(args),
    }
}

fn rates(command: RatesCommand) -> Result<Outcome> {
    match command {
        RatesCommand::Table { which: 1, out } => {
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["r", "theta", "zeta", "single_kernel", "additive", "expected"])?;
            for row in table1()? {
                let additive = match row.additive {
                    crate::rates::LimitValue::Value(v) => v.to_string(),
                    other => other.to_string(),
                };
                w.write_record([
                    row.r.to_string(),
                    row.theta,
                    row.zeta,
                    row.single_kernel.to_string(),
                    additive,
                    row.expected.map_or_else(String::new, |v| v.to_string()),
                ])?;
            }
            w.flush()?;
        }
        RatesCommand::Table { out, .. } => {
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["r", "theta", "zeta", "alpha"])?;
            for row in table2()? {
                w.write_record([row.r.to_string(), row.theta.to_string(), row.zeta.to_string(), row.alpha.to_string()])?;
            }
            w.flush()?;
        }
        RatesCommand::Alpha { r, beta, theta, zeta } => {
            let res = alpha_general(&RateParams::new(r, beta, theta, zeta)?)?;
            println!("alpha = {:.3} (term {})", res.value, res.argmin_term);
            println!("value = {}", res.value);
            let terms: Vec<String> = res.terms.iter().map(|t| t.to_string()).collect();
            println!("terms = [{}]", terms.join(", "));
        }
        RatesCommand::Curve {
            r,
            theta,
            zeta,
            alpha_smooth,
            d_max,
            out,
        } => {
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["d", "ours", "theirs"])?;
            for p in figure_curve(r, theta, zeta, alpha_smooth, d_max)? {
                w.write_record([p.d.to_string(), p.ours.to_string(), p.theirs.to_string()])?;
            }
            w.flush()?;
        }
    }
    Ok(Outcome::Done)
}

fn fit_cmd(args: FitArgs) -> Result<Outcome> {
    let data = DataSet::read_csv_path(&args.data)?;
    let kernel: KernelSpec = serde_json::from_str(&std::fs::read_to_string(&args.kernel)?)?;
    kernel.validate()?;
    kernel.check_dim(data.dim())?;
    let opts = FitOptions {
        gap_tol: args.gap_tol,
        max_epochs: args.max_epochs,
        seed: args.seed,
    };
    let model = fit(&kernel, &data, args.lambda, args.tau, &opts)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    model.to_json(&mut w)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!("fitted {} points, duality gap {}", data.len(), model.gap());
    Ok(Outcome::Done)
}

fn predict_cmd(args: PredictArgs) -> Result<Outcome> {
    let model = Model::from_json(File::open(&args.model)?)?;
    let data = DataSet::read_csv_path(&args.data)?;
    let preds = predict_all(&model, data.inputs())?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("prediction".into());
    w.write_record(&header)?;
    for (x, p) in data.inputs().rows().zip(&preds) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(p.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(Outcome::Done)
}

fn experiment_cmd(args: ExperimentArgs) -> Result<Outcome> {
    let mut spec = ExperimentSpec::from_json_path(&args.config)?;
    if let Some(w) = args.workers {
        spec.workers = w;
    }
    spec.validate()?;
    eprintln!("experiment: {}", serde_json::to_string(&spec)?);
    let outcome = rate_experiment(&spec)?;
    write_outcome(&outcome, &args.out_dir)?;
    for f in &outcome.fits {
        eprintln!("{}: slope {:.4}, intercept {:.4}, r2 {:.4}", f.kernel, f.slope, f.intercept, f.r2);
    }
    Ok(if outcome.failures.is_empty() {
        Outcome::Done
    } else {
        Outcome::Failed
    })
}

fn report(pass: bool, label: &str) -> Outcome {
    eprintln!("{label}: {}", if pass { "pass" } else { "FAIL" });
    if pass {
        Outcome::Done
    } else {
        Outcome::Failed
    }
}

fn verify_cmd(args: VerifyArgs) -> Result<Outcome> {
    let out = args.out.as_deref();
    let rows = match args.suite {
        Suite::Lemma2 => lemma2_suite(args.seed, 100)?,
        Suite::Approx => approx_suite(args.seed, 10)?,
        Suite::Solver => solver_suite(args.seed)?,
        Suite::Example1 => example1_suite()?,
        Suite::Capacity => {
            let v = capacity_suite(args.seed, args.c_zeta, args.zeta)?;
            write_capacity_csv(&v.report, output(out)?)?;
            let cover_path = out.map(coverage_path);
            write_case_csv(&v.coverage, output(cover_path.as_deref())?)?;
            eprintln!(
                "c_zeta {} zeta {}; construction {}; homogeneity {}",
                v.c_zeta, v.zeta, v.report.construction, v.report.homogeneity
            );
            return Ok(report(v.pass(), "capacity"));
        }
    };
    write_case_csv(&rows, output(out)?)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{} cases, {} failed", rows.len(), failed);
    Ok(report(all_pass(&rows), &format!("{:?}", args.suite).to_lowercase()))
}

/// `report.csv` -> `report_coverage.csv`.
fn coverage_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match ext {
        Some(e) => format!("{stem}_coverage.{e}"),
        None => format!("{stem}_coverage"),
    };
    path.with_file_name(name)
}
