use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nonlin_core::harness::{
    run_barrier, run_check, run_delta, run_freeze, run_perturb, run_rates, run_solve, solution_csv, ProblemConfig,
    RateReport,
};
use nonlin_core::Error;

#[derive(Parser)]
#[command(name = "nonlin", version, about = "Monotone schemes and diagnostics for fully nonlinear elliptic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// JSON problem config.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted. CSV output gets a `.json` sidecar report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Solve once at the config's `h`.
    Solve(Common),
    /// Grid refinement study over `h_list`.
    Rates(Common),
    /// δ-solutions from inf/sup convolutions over `theta_list`.
    Delta(Common),
    /// Frozen-coefficient study over `r_list` around `x0`.
    Freeze(Common),
    /// Perturbed operators over `eps_list`.
    Perturb(Common),
    /// Barrier sandwich over `c_list`.
    Barrier(Common),
    /// Monotonicity, consistency and ellipticity checks.
    Check(Common),
}

enum Failure {
    Assertion(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("NONLIN_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut p = out.to_path_buf();
    if p.extension().is_some_and(|e| e == "json") {
        p.set_extension("report.json");
    } else {
        p.set_extension("json");
    }
    p
}

/// Writes the primary output and, for CSV files, the JSON sidecar.
fn emit<T: serde::Serialize>(c: &Common, csv: &str, report: &T) -> Result<(), Error> {
    let json = to_json(report)?;
    match c.format {
        Format::Json => write_out(c.out.as_deref(), &json),
        Format::Csv => {
            write_out(c.out.as_deref(), csv)?;
            if let Some(out) = &c.out {
                std::fs::write(sidecar(out), json)?;
            }
            Ok(())
        }
    }
}

fn finish_rates(c: &Common, report: RateReport) -> Result<(), Failure> {
    emit(c, &report.to_csv(), &report)?;
    if let Some(s) = report.slope {
        eprintln!(
            "{}: slope {s:.4} (R² {:.4}{})",
            report.experiment,
            report.r_squared.unwrap_or(f64::NAN),
            if report.reliable { "" } else { ", unreliable" }
        );
    } else {
        eprintln!("{}: slope undefined (fewer than 3 positive errors)", report.experiment);
    }
    assertions_ok(report.assertions.iter().map(|a| (a.name.as_str(), a.passed, a.detail.as_str())))
}

fn assertions_ok<'a>(items: impl Iterator<Item = (&'a str, bool, &'a str)>) -> Result<(), Failure> {
    let failed: Vec<String> = items.filter(|(_, ok, _)| !ok).map(|(n, _, d)| format!("{n}: {d}")).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(failed.join("; ")))
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (c, kind) = match &command {
        Command::Solve(c) => (c, "solve"),
        Command::Rates(c) => (c, "rates"),
        Command::Delta(c) => (c, "delta"),
        Command::Freeze(c) => (c, "freeze"),
        Command::Perturb(c) => (c, "perturb"),
        Command::Barrier(c) => (c, "barrier"),
        Command::Check(c) => (c, "check"),
    };
    let mut cfg = ProblemConfig::from_path(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    match kind {
        "solve" => {
            let (u, summary) = run_solve(&cfg)?;
            let exact = cfg.resolve()?.exact;
            emit(c, &solution_csv(&u, exact.as_ref()), &summary)?;
            assertions_ok(summary.assertions.iter().map(|a| (a.name.as_str(), a.passed, a.detail.as_str())))
        }
        "rates" => finish_rates(c, run_rates(&cfg, &cfg.h_list)?),
        "delta" => finish_rates(c, run_delta(&cfg, &cfg.theta_list)?),
        "freeze" => {
            let x0 = cfg.x0.clone().unwrap_or_else(|| cfg.domain.center());
            finish_rates(c, run_freeze(&cfg, &x0, &cfg.r_list)?)
        }
        "perturb" => finish_rates(c, run_perturb(&cfg, &cfg.eps_list)?),
        "barrier" => finish_rates(c, run_barrier(&cfg, &cfg.c_list)?),
        _ => {
            let report = run_check(&cfg)?;
            write_out(c.out.as_deref(), &to_json(&report)?)?;
            assertions_ok(report.assertions.iter().map(|a| (a.name.as_str(), a.passed, a.detail.as_str())))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Undecomposable { .. }
                | Error::OutsideDomain { .. }
                | Error::DegenerateMesh(_)
                | Error::Unsupported(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
