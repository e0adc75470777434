//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ptequil_core::admm::{AdmmError, Coordinator};
use ptequil_core::oracle::{certify, monolithic_solve, CertifyTolerance, OracleError, OracleOptions};
use ptequil_core::scenario::sample_uniform;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::IoError;
use crate::exec::{Threaded, WallClock};
use crate::report::{read_json, write_bundle, write_json, write_tables, write_trace, ResultBundle};
use crate::tables::write_scenarios;

#[derive(Debug, Parser)]
#[command(name = "ptequil", version, about = "Coupled road/power market equilibrium")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the decomposed ADMM solver.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Solve the whole system as one convex program (small instances only).
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a result directory against every agent's best response.
    Certify {
        #[arg(long)]
        result: PathBuf,
        /// Relative tolerance; regrets are compared against tol times the
        /// expected system cost.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Sample renewable capacity-factor scenarios into a CSV file.
    SampleScenarios {
        /// Renewable bus ids; taken from the config's sites when omitted.
        #[arg(long, value_delimiter = ',')]
        sites: Vec<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        low: f64,
        #[arg(long, default_value_t = 1.5)]
        high: f64,
        #[arg(long)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-emit CSV tables, JSON and the convergence trace from a result directory.
    Report {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("certificate failed")]
    CertificateFailed(serde_json::Value),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Io(e) => json!({"error": "io", "message": e.to_string()}),
            CliError::Admm(AdmmError::NonConverged(r)) => json!({
                "error": "non_converged",
                "message": self.to_string(),
                "iterations": r.iterations,
                "gap": r.gap,
            }),
            CliError::Admm(e) => match e.scenario() {
                Some(s) => json!({"error": "infeasible", "scenario": s, "message": e.to_string()}),
                None => json!({"error": "admm", "message": e.to_string()}),
            },
            CliError::Oracle(e) => json!({"error": "oracle", "message": e.to_string()}),
            CliError::CertificateFailed(cert) => json!({"error": "certificate_failed", "certificate": cert}),
            CliError::Usage(m) => json!({"error": "usage", "message": m}),
        }
    }
}

fn load(config: &Path, output: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn solve(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (system, scenarios) = cfg.build()?;
    let clock = WallClock::start();
    let coordinator = Coordinator::new(&system, &scenarios, cfg.admm(), Threaded { threads: cfg.threads })?;
    match coordinator.run(&clock) {
        Ok(result) => {
            let bundle = ResultBundle::from_admm(cfg, &system, &scenarios, &result);
            write_bundle(&cfg.output, &system, &bundle)?;
            let _ = writeln!(
                out,
                "converged in {} iterations, gap {:.3e}, expected objective {:.6}",
                result.iterations, result.gap, result.expected_objective
            );
            Ok(())
        }
        Err(AdmmError::NonConverged(result)) => {
            // keep the best state on disk for inspection
            let bundle = ResultBundle::from_admm(cfg, &system, &scenarios, &result);
            write_bundle(&cfg.output, &system, &bundle)?;
            Err(AdmmError::NonConverged(result).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn oracle(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (system, scenarios) = cfg.build()?;
    let options = OracleOptions {
        nonnegative_charging: cfg.nonnegative_charging,
        ..OracleOptions::default()
    };
    let sol = monolithic_solve(&system, &scenarios, &options)?;
    let bundle = ResultBundle::from_oracle(cfg, &system, &scenarios, &sol);
    write_bundle(&cfg.output, &system, &bundle)?;
    let _ = writeln!(
        out,
        "solved in {} iterations, residual {:.3e}, expected objective {:.6}",
        sol.iterations, sol.residual, sol.expected_objective
    );
    Ok(())
}

fn certify_dir(result: &Path, tol: f64, out: &mut dyn Write) -> Result<(), CliError> {
    let bundle = read_json(&result.join("result.json"))?;
    let (system, _) = bundle.config.build()?;
    let tolerance = CertifyTolerance::relative(tol, bundle.expected_objective);
    let cert = certify(&system, &bundle.scenarios, &bundle.state, &bundle.prices, tolerance)?;
    let value = serde_json::to_value(&cert).map_err(IoError::from)?;
    if cert.pass {
        let _ = writeln!(out, "{value}");
        Ok(())
    } else {
        Err(CliError::CertificateFailed(value))
    }
}

#[allow(clippy::too_many_arguments)]
fn sample(
    sites: Vec<u32>,
    config: Option<PathBuf>,
    count: usize,
    low: f64,
    high: f64,
    seed: u64,
    output: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let sites = match (sites.is_empty(), config) {
        (false, _) => sites,
        (true, Some(c)) => {
            let (system, _) = RunConfig::load(&c)?.build()?;
            system.power.buses.iter().filter(|b| b.renewable.is_some()).map(|b| b.id).collect()
        }
        (true, None) => return Err(CliError::Usage("give --sites or --config".into())),
    };
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let set = sample_uniform(&sites, count, low, high, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    match output {
        Some(path) => {
            let file = std::fs::File::create(&path).map_err(|source| IoError::Write { path, source })?;
            write_scenarios(&set, file)?;
        }
        None => write_scenarios(&set, out)?,
    }
    Ok(())
}

fn report(result: &Path, output: Option<PathBuf>) -> Result<(), CliError> {
    let bundle = read_json(&result.join("result.json"))?;
    let dir = output.unwrap_or_else(|| result.to_path_buf());
    let (system, _) = bundle.config.build()?;
    std::fs::create_dir_all(&dir).map_err(|source| IoError::Write {
        path: dir.clone(),
        source,
    })?;
    write_tables(&dir, &system, &bundle)?;
    write_trace(&dir.join("trace.csv"), &bundle.trace)?;
    if dir != result {
        write_json(&dir.join("result.json"), &bundle)?;
    }
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Solve {
            config,
            output,
            threads,
        } => {
            let mut cfg = load(&config, output)?;
            if let Some(t) = threads {
                cfg.threads = t.max(1);
            }
            solve(&cfg, out)
        }
        Command::Oracle { config, output } => oracle(&load(&config, output)?, out),
        Command::Certify { result, tol } => certify_dir(&result, tol, out),
        Command::SampleScenarios {
            sites,
            config,
            count,
            low,
            high,
            seed,
            output,
        } => sample(sites, config, count, low, high, seed, output, out),
        Command::Report { result, output } => report(&result, output),
    }
}

/// Parses `args` and runs; returns the process exit code. Usage errors exit
/// with 2, solver and data errors with 1 after printing JSON on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}
