// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mre_core::audit::{run_audit, AuditOptions, DEFAULT_POINTS, DEFAULT_SEED};
use mre_core::config::RunConfig;
use mre_core::converge::run_converge;
use mre_core::experiment::{execute, exit, write_file, write_json, write_outputs, ExperimentError};
use mre_core::levels::{self, LevelOptions};
use mre_core::{scenario, Params};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mre", version, about = "Planar compressible magnetic relaxation: solver and verification harness")]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true, env = "MRE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write its time series and summary.
    Run(RunArgs),
    /// Sample W and Z on a lattice and describe their sublevel sets.
    Levels(LevelArgs),
    /// Check derivative and identity formulas at seeded random points.
    Audit(AuditArgs),
    /// Resolution, time-step and regularization sweeps.
    Converge(RunArgs),
    /// List built-in scenarios, or print one as TOML.
    Scenarios {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file layered over its `scenario` defaults.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario to run unchanged.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory; without it the JSON report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LevelArgs {
    #[arg(long, default_value_t = 1.5)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    #[arg(long, default_value_t = levels::DEFAULT_RHO_RANGE.0)]
    rho_min: f64,
    #[arg(long, default_value_t = levels::DEFAULT_RHO_RANGE.1)]
    rho_max: f64,
    #[arg(long, default_value_t = levels::DEFAULT_N_RHO)]
    n_rho: usize,
    #[arg(long, default_value_t = levels::DEFAULT_B_RANGE.0, allow_hyphen_values = true)]
    b_min: f64,
    #[arg(long, default_value_t = levels::DEFAULT_B_RANGE.1)]
    b_max: f64,
    #[arg(long, default_value_t = levels::DEFAULT_N_B)]
    n_b: usize,
    /// Level for {W ≤ level}; defaults to max W of the relax-bbar initial data.
    #[arg(long)]
    w_level: Option<f64>,
    /// Level for {Z ≤ level}; defaults to max Z of the relax-bbar initial data.
    #[arg(long)]
    z_level: Option<f64>,
    /// Directory for w_levels.csv, z_levels.csv and levels.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    points: usize,
    /// Replace every check's tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 1.5)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    /// Directory for audit.json; without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code, reported on stderr and in any JSON output.
struct Failure {
    code: i32,
    message: String,
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl ToString) -> Failure {
    Failure {
        code: exit::CONFIG,
        message: message.to_string(),
    }
}

fn load_config(args: &RunArgs, default_scenario: &str) -> Result<RunConfig, Failure> {
    match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure {
                code: exit::IO,
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            RunConfig::from_toml_str(&text).map_err(config_failure)
        }
        (None, name) => {
            let name = name.as_deref().unwrap_or(default_scenario);
            scenario::find(name)
                .map(|s| s.config())
                .ok_or_else(|| config_failure(format!("unknown scenario {name:?}")))
        }
    }
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>, file: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure {
                code: exit::IO,
                message: format!("cannot create {}: {e}", dir.display()),
            })?;
            write_json(&dir.join(file), value)?;
        }
        None => println!("{}", serde_json::to_string_pretty(value).expect("reports serialize")),
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32, Failure> {
    let cfg = load_config(args, "relax-b0")?;
    let art = execute(&cfg)?;
    let s = &art.summary;
    match &args.out {
        Some(dir) => {
            write_outputs(&art, dir)?;
        }
        None => emit(s, None, "")?,
    }
    eprintln!(
        "{}: {} at t = {} after {} steps, {} records",
        s.scenario, s.halt_label, s.t_final, s.steps, s.records
    );
    Ok(s.exit_code)
}

fn cmd_levels(args: &LevelArgs) -> Result<i32, Failure> {
    let params = Params::new(args.gamma, args.b0, 0.0).map_err(config_failure)?;
    let mut opts = LevelOptions::with_reference_levels(params).map_err(config_failure)?;
    opts.rho_range = (args.rho_min, args.rho_max);
    opts.b_range = (args.b_min, args.b_max);
    opts.n_rho = args.n_rho;
    opts.n_b = args.n_b;
    opts.w_level = args.w_level.unwrap_or(opts.w_level);
    opts.z_level = args.z_level.unwrap_or(opts.z_level);
    let study = levels::study(&opts).map_err(config_failure)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure {
            code: exit::IO,
            message: format!("cannot create {}: {e}", dir.display()),
        })?;
        write_file(&dir.join("w_levels.csv"), |w| study.w.write_csv(w))?;
        write_file(&dir.join("z_levels.csv"), |w| study.z.write_csv(w))?;
    }
    emit(&study.report, args.out.as_deref(), "levels.json")?;
    Ok(exit::OK)
}

fn cmd_audit(args: &AuditArgs) -> Result<i32, Failure> {
    let params = Params::new(args.gamma, args.b0, 0.0).map_err(config_failure)?;
    if let Some(t) = args.tol {
        if t.is_nan() || t < 0.0 {
            return Err(config_failure(format!("--tol must be nonnegative (got {t})")));
        }
    }
    let report = run_audit(&AuditOptions {
        seed: args.seed,
        points: args.points,
        tolerance: args.tol,
        params,
    });
    emit(&report, args.out.as_deref(), "audit.json")?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!("audit: {} failed at {} of {} points (max error {:e})", c.name, c.failures, c.evaluated, c.max_error);
    }
    Ok(if report.passed { exit::OK } else { exit::AUDIT })
}

fn cmd_converge(args: &RunArgs) -> Result<i32, Failure> {
    let cfg = load_config(args, "converge-wide")?;
    let report = run_converge(&cfg).map_err(config_failure)?;
    emit(&report, args.out.as_deref(), "converge.json")?;
    for f in &report.failures {
        eprintln!("converge: {f}");
    }
    Ok(if report.failures.is_empty() { exit::OK } else { exit::DIAGNOSTICS })
}

fn cmd_scenarios(show: Option<&str>) -> Result<i32, Failure> {
    match show {
        Some(name) => {
            let s = scenario::find(name).ok_or_else(|| config_failure(format!("unknown scenario {name:?}")))?;
            print!("{}", s.config().to_toml_string());
        }
        None => {
            for s in scenario::registry() {
                println!("{:<14} {}", s.name(), s.describe());
            }
        }
    }
    Ok(exit::OK)
}

/// Directory that should receive an error summary, if any.
fn error_dir(cmd: &Command) -> Option<(&Path, &'static str)> {
    match cmd {
        Command::Run(a) => a.out.as_deref().map(|d| (d, "summary.json")),
        Command::Converge(a) => a.out.as_deref().map(|d| (d, "converge.json")),
        Command::Levels(a) => a.out.as_deref().map(|d| (d, "levels.json")),
        Command::Audit(a) => a.out.as_deref().map(|d| (d, "audit.json")),
        Command::Scenarios { .. } => None,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Levels(a) => cmd_levels(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Scenarios { show } => cmd_scenarios(show.as_deref()),
    };
    let code = match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if let Some((dir, file)) = error_dir(&cli.command) {
                let body = json!({ "error": f.message, "exit_code": f.code });
                if fs::create_dir_all(dir).is_ok() {
                    let _ = write_json(&dir.join(file), &body);
                }
            }
            f.code
        }
    };
    ExitCode::from(code as u8)
}
