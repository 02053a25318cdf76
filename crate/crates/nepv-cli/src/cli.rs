//! Command-line parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::check::{check, check_json, passed, table};
use crate::commands::{
    shift_sweep, solve, sweep, sweep_summary_json, write_shift_sweep, write_solve, write_sweep,
};
use crate::config::{ExperimentConfig, Preset};
use crate::exit;
use crate::output::{Meta, Output};
use crate::reproduce::{reproduce, summary_json};
use crate::setup::Experiment;

const AFTER_HELP: &str = "\
Output files (CSV files start with a `# config_sha256=… seed=… tol=… max_iters=… fd_tol=…` line,
JSON files carry the same data under `meta`; floats have 17 significant digits):
  solve        report.json, history.csv
  sweep        sweep.csv, sweep.json
  shift-sweep  shifts.csv, shifts.json
  check        check.json
  reproduce    summary.json plus, for ex1 ex2 ex4 ex5, sweep.csv, report.json, history.csv,
               shifts.csv, shifts.json (and oscillation.csv for ex5); samples.csv for ex3 ex6

CSV columns:
  history.csv      iter,nres,objective,sin_theta,gap
  oscillation.csv  iter,nres,objective,sin_theta,gap
  sweep.csv        param,converged,observed_rate,rho_L,gap,sigma_used,observed_rate_nres,iterations,error
  shifts.csv       sigma,rho_L_sigma,observed_rate,converged
  samples.csv      param,converged,observed_rate,rho_L,sigma_used,observed_rate_nres,iterations,error

Empty fields are values that are undefined at that point.

Config files hold one `key = value` per line (# starts a comment). Keys: preset family param alpha
theta weight sigma fallback_sigma grid shift_grid tol max_iters seed out matrix_a matrix_b matrix_d
n k r dense_cap fd_tol inject_fault. Matrix sources are Matrix Market paths or one of tridiag,
diag-iota, random-gaussian:SEED, random-rank-r:R:SEED.

Exit codes: 0 ok, 1 validation failure, 2 config or IO error.";

#[derive(Debug, Parser)]
#[command(
    name = "nepv",
    version,
    about = "NEPv solver with alignment, level shifting and rate analysis"
)]
#[command(after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve at one parameter; writes report.json and history.csv.
    Solve(Common),
    /// Warm-started sweep over --grid; writes sweep.csv.
    Sweep(Common),
    /// ρ(𝓛σ) over --shift-grid at a fixed parameter; writes shifts.csv.
    ShiftSweep {
        #[command(flatten)]
        common: Common,
        /// Also run level-shifted SCF at every shift for the observed rate.
        #[arg(long)]
        observed: bool,
    },
    /// Finite-difference and invariant checks; exit 1 on any failure.
    Check(Common),
    /// Reproduce one of the worked examples; exit 1 if a target is missed.
    Reproduce {
        /// ex1 … ex6
        example: Preset,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Config file with `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Example preset supplying matrices and defaults (ex1 … ex6).
    #[arg(long)]
    pub preset: Option<String>,
    /// alpha | theta | custom
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// Level shift σ (fallback shift for sweeps).
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<String>,
    /// Parameter grid start:stop:count.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Shift grid start:stop:count.
    #[arg(long, allow_hyphen_values = true)]
    pub shift_grid: Option<String>,
    /// NRes stopping tolerance [default: 1e-13].
    #[arg(long)]
    pub tol: Option<String>,
    /// [default: 3000]
    #[arg(long)]
    pub max_iters: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Output directory [default: out].
    #[arg(long)]
    pub out: Option<String>,
    /// Matrix Market file or generator for A.
    #[arg(long)]
    pub matrix_a: Option<String>,
    #[arg(long)]
    pub matrix_b: Option<String>,
    #[arg(long)]
    pub matrix_d: Option<String>,
    /// Deliberately corrupt a derivative (dh-phi-sign).
    #[arg(long)]
    pub inject_fault: Option<String>,
    /// Any other config key, as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    /// The config file, then the flags in order.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("preset", &self.preset),
            ("family", &self.family),
            ("alpha", &self.alpha),
            ("theta", &self.theta),
            ("sigma", &self.sigma),
            ("grid", &self.grid),
            ("shift_grid", &self.shift_grid),
            ("tol", &self.tol),
            ("max_iters", &self.max_iters),
            ("seed", &self.seed),
            ("out", &self.out),
            ("matrix_a", &self.matrix_a),
            ("matrix_b", &self.matrix_b),
            ("matrix_d", &self.matrix_d),
            ("inject_fault", &self.inject_fault),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
            cfg.set(k, v).with_context(|| format!("--set {kv}"))?;
        }
        Ok(cfg)
    }
}

/// A failure tagged with the exit code it maps to.
struct Failure(i32, anyhow::Error);

trait Stage<T> {
    fn code(self, code: i32) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn code(self, code: i32) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure(code, e))
    }
}

fn prepare(
    common: &Common,
    preset: Option<Preset>,
) -> std::result::Result<(Experiment, Output), Failure> {
    let mut cfg = common.config().code(exit::CONFIG)?;
    if preset.is_some() {
        cfg.preset = preset;
    }
    let exp = Experiment::resolve(&cfg).code(exit::CONFIG)?;
    let out = Output::new(&cfg.out, Meta::new(&cfg)).code(exit::CONFIG)?;
    Ok((exp, out))
}

fn dispatch(cmd: Command) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Solve(c) => {
            let (exp, out) = prepare(&c, None)?;
            let s = solve(&exp).code(exit::VALIDATION)?;
            write_solve(&exp, &out, &s).code(exit::CONFIG)?;
            let a = s.analysis.as_ref();
            println!(
                "converged={} iterations={} nres={:.3e} rho_L={} observed_rate={}",
                s.report.converged,
                s.report.iterations,
                s.report.final_nres,
                a.and_then(|a| a.rho)
                    .map_or("-".into(), |v| format!("{v:.8}")),
                a.and_then(|a| a.observed_rate)
                    .map_or("-".into(), |v| format!("{v:.8}")),
            );
            Ok(exit::OK)
        }
        Command::Sweep(c) => {
            let (exp, out) = prepare(&c, None)?;
            let grid = exp.grid().code(exit::CONFIG)?;
            let rows = sweep(&exp, &grid.points()).code(exit::VALIDATION)?;
            write_sweep(&out, "sweep.csv", &rows).code(exit::CONFIG)?;
            let summary = sweep_summary_json(&rows);
            println!("{summary}");
            out.json("sweep.json", summary).code(exit::CONFIG)?;
            Ok(exit::OK)
        }
        Command::ShiftSweep { common, observed } => {
            let (exp, out) = prepare(&common, None)?;
            let s = shift_sweep(&exp, observed).code(exit::VALIDATION)?;
            write_shift_sweep(&out, "", &s).code(exit::CONFIG)?;
            println!(
                "param={} rho_L={:.8} sigma_L={:.6} sigma_star={:.6} rho_star={:.6}",
                s.param, s.rho_unshifted, s.bound.sigma_l, s.sigma_star, s.rho_star
            );
            Ok(exit::OK)
        }
        Command::Check(c) => {
            let (exp, out) = prepare(&c, None)?;
            let lines = check(&exp).code(exit::VALIDATION)?;
            print!("{}", table(&lines));
            out.json("check.json", check_json(&lines))
                .code(exit::CONFIG)?;
            Ok(if passed(&lines) {
                exit::OK
            } else {
                exit::VALIDATION
            })
        }
        Command::Reproduce { example, common } => {
            let (exp, out) = prepare(&common, Some(example))?;
            let targets = reproduce(&exp, &out).code(exit::VALIDATION)?;
            for t in &targets {
                println!("{}", t.line());
            }
            out.json("summary.json", summary_json(example, &targets))
                .code(exit::CONFIG)?;
            Ok(if targets.iter().all(|t| t.pass) {
                exit::OK
            } else {
                exit::VALIDATION
            })
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand; returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            code
        }
    }
}
