//! The subcommands as library functions returning their results; the
//! `write_*` functions persist them.

use anyhow::{Context, Result};
use nepv_core::alignment::{align, regularity_check, RegularityReport, RegularityTols};
use nepv_core::convergence::{certify, CertifyOptions, RateOperators, SigmaBound};
use nepv_core::linalg::{Mat, SpectralOptions};
use nepv_core::scf::{run_scf, ScfOptions, ScfReport};
use nepv_core::sweep::{
    analyze_point, continuation, linspace, optimal_shift, AnalysisOptions, ContinuationOptions,
    PointAnalysis, SolvedPoint,
};
use nepv_core::StiefelPoint;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Family;
use crate::output::{fmt_f64, json_f64, Output};
use crate::setup::Experiment;

/// Largest parameter step of the warm-start continuation.
pub const CONTINUATION_STEP: f64 = 0.005;

pub fn scf_options(exp: &Experiment) -> ScfOptions {
    ScfOptions {
        tol: exp.cfg.tol,
        max_iters: exp.cfg.max_iters,
        ..Default::default()
    }
}

pub fn analysis_options(exp: &Experiment) -> AnalysisOptions {
    AnalysisOptions {
        spectral: SpectralOptions {
            dense_cap: exp.cfg.dense_cap,
            seed: exp.cfg.seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn matrix_json(m: &Mat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| json!((0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>()))
            .collect(),
    )
}

/// Tolerance for agreement with `reference` to `digits` significant digits:
/// half a unit in the last retained digit.
pub fn sig_digit_tol(reference: f64, digits: i32) -> f64 {
    if reference == 0.0 {
        return 0.0;
    }
    0.5 * 10f64.powi(reference.abs().log10().floor() as i32 - (digits - 1))
}

/// Warm-started continuation from parameter 0 to `target` in steps of at
/// most [`CONTINUATION_STEP`]; the last entry is the point at `target`.
/// The custom family and `target = 0` are solved directly from the linear
/// start.
pub fn warm_start(exp: &Experiment, target: f64) -> Result<SolvedPoint> {
    let x0 = exp.initial_guess()?;
    let params = if exp.family == Family::Custom || target == 0.0 {
        vec![target]
    } else {
        let steps = (target.abs() / CONTINUATION_STEP).ceil() as usize + 1;
        linspace(0.0, target, steps.max(2))
    };
    let opts = ContinuationOptions {
        scf: quiet(scf_options(exp)),
        fallback_shift: exp.fallback_sigma(),
    };
    let mut pts = continuation(|t| exp.problem(t).map_err(to_core), &params, &x0, &opts)?;
    Ok(pts.pop().expect("non-empty grid"))
}

fn quiet(scf: ScfOptions) -> ScfOptions {
    ScfOptions {
        record_history: false,
        ..scf
    }
}

fn to_core(e: anyhow::Error) -> nepv_core::NepvError {
    nepv_core::NepvError::InvalidArgument(format!("{e:#}"))
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub param: f64,
    pub sigma: Option<f64>,
    pub start: StiefelPoint,
    pub report: ScfReport,
    pub analysis: Option<PointAnalysis>,
    pub sigma_bound: Option<SigmaBound>,
    pub regularity: RegularityReport,
    pub alignment_identity: bool,
    pub rank_d: usize,
}

pub fn solve(exp: &Experiment) -> Result<SolveOutcome> {
    let param = exp.param()?;
    let sigma = exp.cfg.sigma;
    let warm = warm_start(exp, param)?;
    let p = exp.problem(param)?;
    let opts = ScfOptions {
        shift: sigma,
        ..scf_options(exp)
    };
    let report = run_scf(&p, &warm.start, &opts)?;
    let (mut analysis, mut sigma_bound) = (None, None);
    if report.converged {
        let an = analysis_options(exp);
        analysis = Some(analyze_point(
            &p,
            &report.final_x,
            &warm.start,
            sigma,
            &opts,
            &an,
        ));
        sigma_bound = certify(&p, &report.final_x, &CertifyOptions::default())
            .and_then(|c| RateOperators::new(&p, c))
            .and_then(|ops| ops.sigma_lower(&an.spectral))
            .ok();
    }
    let regularity = regularity_check(&report.final_x, p.d(), &RegularityTols::default())?;
    let q = align(&report.final_x, p.d())?.q;
    let k = q.nrows();
    Ok(SolveOutcome {
        param,
        sigma,
        start: warm.start,
        alignment_identity: (q - Mat::identity(k, k)).norm() == 0.0,
        rank_d: p.d_factorization().r,
        report,
        analysis,
        sigma_bound,
        regularity,
    })
}

pub fn history_rows(report: &ScfReport) -> Vec<Vec<String>> {
    report
        .history
        .iter()
        .enumerate()
        .map(|(i, h)| {
            vec![
                i.to_string(),
                fmt_f64(Some(h.nres)),
                fmt_f64(Some(h.objective)),
                fmt_f64(h.sin_theta),
                fmt_f64(h.gap),
            ]
        })
        .collect()
}

pub const HISTORY_COLUMNS: [&str; 5] = ["iter", "nres", "objective", "sin_theta", "gap"];

pub fn solve_json(exp: &Experiment, s: &SolveOutcome) -> Value {
    let r = &s.report;
    let a = s.analysis.as_ref();
    json!({
        "command": "solve",
        "family": exp.family.to_string(),
        "param": s.param,
        "sigma": json_f64(s.sigma),
        "n": exp.n(),
        "k": exp.k(),
        "rank_d": s.rank_d,
        "converged": r.converged,
        "iterations": r.iterations,
        "final_nres": json_f64(Some(r.final_nres)),
        "divergence": format!("{:?}", r.divergence),
        "degenerate_gap_steps": r.degenerate_gap_steps,
        "final_x": matrix_json(r.final_x.as_mat()),
        "lambda": matrix_json(&r.final_lambda),
        "regularity": {
            "definite": s.regularity.definite,
            "rank_preserving": s.regularity.rank_preserving,
            "min_eig": s.regularity.min_eig,
            "rank_xtd": s.regularity.ell,
            "rank_d": s.regularity.r,
        },
        "alignment": { "q_is_identity": s.alignment_identity },
        "certified": a.is_some_and(|a| a.gap.is_some()),
        "gap": json_f64(a.and_then(|a| a.gap)),
        "rho_L": json_f64(a.and_then(|a| a.rho)),
        "rho_converged": a.is_some_and(|a| a.rho_converged),
        "observed_rate": json_f64(a.and_then(|a| a.observed_rate)),
        "observed_rate_nres": json_f64(a.and_then(|a| a.observed_rate_nres)),
        "sigma_L": json_f64(s.sigma_bound.map(|b| b.sigma_l)),
        "mu_min": json_f64(s.sigma_bound.map(|b| b.mu_min)),
        "q_asymmetry": json_f64(s.sigma_bound.and_then(|b| b.asymmetry)),
        "analysis_error": a.and_then(|a| a.error.as_ref()).map(|e| e.to_string()),
    })
}

pub fn write_solve(exp: &Experiment, out: &Output, s: &SolveOutcome) -> Result<()> {
    out.json("report.json", solve_json(exp, s))?;
    // The re-run carries sin Θ against the polished solution.
    let hist = s
        .analysis
        .as_ref()
        .and_then(|a| a.rerun.as_ref())
        .unwrap_or(&s.report);
    out.csv("history.csv", &HISTORY_COLUMNS, &history_rows(hist))?;
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param: f64,
    /// Plain SCF from the warm start converged.
    pub converged: bool,
    pub iterations: usize,
    pub observed_rate: Option<f64>,
    pub observed_rate_nres: Option<f64>,
    pub rho_l: Option<f64>,
    pub gap: Option<f64>,
    pub sigma_used: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "param",
    "converged",
    "observed_rate",
    "rho_L",
    "gap",
    "sigma_used",
    "observed_rate_nres",
    "iterations",
    "error",
];

pub fn sweep(exp: &Experiment, params: &[f64]) -> Result<Vec<SweepRow>> {
    let x0 = exp.initial_guess()?;
    let fallback = exp.cfg.sigma.or(exp.fallback_sigma());
    let scf = scf_options(exp);
    let opts = ContinuationOptions {
        scf: quiet(scf.clone()),
        fallback_shift: fallback,
    };
    // Per-point problem failures are recorded in-row by solving point-wise.
    let solved = continuation_tolerant(exp, params, &x0, &opts);
    let an = analysis_options(exp);
    Ok(solved
        .par_iter()
        .map(|(param, point)| match point {
            Err(e) => SweepRow {
                param: *param,
                converged: false,
                iterations: 0,
                observed_rate: None,
                observed_rate_nres: None,
                rho_l: None,
                gap: None,
                sigma_used: None,
                error: Some(e.clone()),
            },
            Ok(pt) => {
                let mut row = SweepRow {
                    param: *param,
                    converged: pt.plain.converged,
                    iterations: pt.plain.iterations,
                    observed_rate: None,
                    observed_rate_nres: None,
                    rho_l: None,
                    gap: None,
                    sigma_used: pt.sigma_used(),
                    error: None,
                };
                match (pt.solution(), exp.problem(*param)) {
                    (Some(x), Ok(p)) => {
                        let an = AnalysisOptions {
                            skip_rerun: !pt.plain.converged,
                            ..an.clone()
                        };
                        let a = analyze_point(&p, x, &pt.start, None, &scf, &an);
                        row.rho_l = a.rho;
                        row.gap = a.gap;
                        row.observed_rate = a.observed_rate;
                        row.observed_rate_nres = a.observed_rate_nres;
                        row.error = a.error.map(|e| e.to_string());
                    }
                    (None, _) => row.error = Some("no converged solution".into()),
                    (_, Err(e)) => row.error = Some(format!("{e:#}")),
                }
                row
            }
        })
        .collect())
}

/// Continuation that keeps going past points whose solve errors out.
fn continuation_tolerant(
    exp: &Experiment,
    params: &[f64],
    x0: &StiefelPoint,
    opts: &ContinuationOptions,
) -> Vec<(f64, std::result::Result<SolvedPoint, String>)> {
    let mut start = x0.clone();
    let mut out = Vec::with_capacity(params.len());
    for &t in params {
        let r = continuation(|t| exp.problem(t).map_err(to_core), &[t], &start, opts)
            .map(|mut v| v.pop().expect("one point"))
            .map_err(|e| e.to_string());
        if let Ok(pt) = &r {
            if let Some(x) = pt.solution() {
                start = x.clone();
            }
        }
        out.push((t, r));
    }
    out
}

/// Maximal runs of consecutive grid points satisfying `pred`, as
/// `(first, last)` parameter pairs.
pub fn runs<T>(
    rows: &[T],
    param: impl Fn(&T) -> f64,
    pred: impl Fn(&T) -> bool,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cur: Option<(f64, f64)> = None;
    for r in rows {
        if pred(r) {
            let t = param(r);
            cur = Some(cur.map_or((t, t), |(a, _)| (a, t)));
        } else if let Some(c) = cur.take() {
            out.push(c);
        }
    }
    out.extend(cur);
    out
}

/// Intervals where `ρ(𝓛) > 1`, with endpoints placed by linear
/// interpolation of the `ρ = 1` crossing between grid points.
pub fn divergence_intervals(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.rho_l.map(|v| (r.param, v)))
        .collect();
    let cross =
        |(t0, v0): (f64, f64), (t1, v1): (f64, f64)| t0 + (1.0 - v0) * (t1 - t0) / (v1 - v0);
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    for i in 0..pts.len() {
        let above = pts[i].1 > 1.0;
        match (above, start) {
            (true, None) => {
                start = Some(if i == 0 {
                    pts[0].0
                } else {
                    cross(pts[i - 1], pts[i])
                })
            }
            (false, Some(s)) => {
                out.push((s, cross(pts[i - 1], pts[i])));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, pts[pts.len() - 1].0));
    }
    out
}

pub fn sweep_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                fmt_f64(Some(r.param)),
                r.converged.to_string(),
                fmt_f64(r.observed_rate),
                fmt_f64(r.rho_l),
                fmt_f64(r.gap),
                fmt_f64(r.sigma_used),
                fmt_f64(r.observed_rate_nres),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_sweep(out: &Output, name: &str, rows: &[SweepRow]) -> Result<()> {
    out.csv(name, &SWEEP_COLUMNS, &sweep_rows(rows))?;
    Ok(())
}

pub fn sweep_summary_json(rows: &[SweepRow]) -> Value {
    let pairs = |v: Vec<(f64, f64)>| {
        v.into_iter()
            .map(|(a, b)| json!([a, b]))
            .collect::<Vec<_>>()
    };
    json!({
        "points": rows.len(),
        "plain_converged": rows.iter().filter(|r| r.converged).count(),
        "rho_above_one": pairs(divergence_intervals(rows)),
        "plain_failures": pairs(runs(rows, |r| r.param, |r| !r.converged)),
    })
}

// ---------------------------------------------------------------- shift sweep

#[derive(Debug, Clone)]
pub struct ShiftRow {
    pub sigma: f64,
    pub rho: Option<f64>,
    pub observed_rate: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ShiftStudy {
    pub param: f64,
    pub rho_unshifted: f64,
    pub bound: SigmaBound,
    /// `ρ(𝓛σ)` at `σ_L + 0.1`.
    pub rho_above_bound: Option<f64>,
    pub sigma_star: f64,
    pub rho_star: f64,
    pub rows: Vec<ShiftRow>,
}

pub const SHIFT_COLUMNS: [&str; 4] = ["sigma", "rho_L_sigma", "observed_rate", "converged"];

/// `with_observed` re-runs level-shifted SCF at every grid shift.
pub fn shift_sweep(exp: &Experiment, with_observed: bool) -> Result<ShiftStudy> {
    let param = exp.shift_param()?;
    let grid = exp.shift_grid()?;
    let warm = warm_start(exp, param)?;
    let x = warm
        .solution()
        .cloned()
        .with_context(|| format!("no converged solution at parameter {param}"))?;
    let p = exp.problem(param)?;
    let an = analysis_options(exp);
    let cert = certify(&p, &x, &an.certify)?;
    let ops = RateOperators::new(&p, cert)?;
    let rho_unshifted = ops.rho(None, &an.spectral)?.rho;
    let bound = ops.sigma_lower(&an.spectral)?;
    let rho_above_bound = ops
        .rho(Some(bound.sigma_l + 0.1), &an.spectral)
        .ok()
        .map(|r| r.rho);
    let (sigma_star, rho_star) =
        optimal_shift(&ops, grid.start, grid.stop, grid.count.max(3), &an.spectral)?;
    let scf = scf_options(exp);
    let rows = grid
        .points()
        .par_iter()
        .map(|&sigma| {
            let rho = ops.rho(Some(sigma), &an.spectral).ok().map(|r| r.rho);
            let (observed_rate, converged) = if with_observed {
                let a = analyze_point(&p, &x, &warm.start, Some(sigma), &scf, &an);
                (a.observed_rate, a.rerun.is_some_and(|r| r.converged))
            } else {
                let opts = ScfOptions {
                    shift: Some(sigma),
                    ..quiet(scf.clone())
                };
                (
                    None,
                    run_scf(&p, &warm.start, &opts).is_ok_and(|r| r.converged),
                )
            };
            ShiftRow {
                sigma,
                rho,
                observed_rate,
                converged,
            }
        })
        .collect();
    Ok(ShiftStudy {
        param,
        rho_unshifted,
        bound,
        rho_above_bound,
        sigma_star,
        rho_star,
        rows,
    })
}

pub fn write_shift_sweep(out: &Output, prefix: &str, s: &ShiftStudy) -> Result<()> {
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(Some(r.sigma)),
                fmt_f64(r.rho),
                fmt_f64(r.observed_rate),
                r.converged.to_string(),
            ]
        })
        .collect();
    out.csv(&format!("{prefix}shifts.csv"), &SHIFT_COLUMNS, &rows)?;
    out.json(&format!("{prefix}shifts.json"), shift_json(s))?;
    Ok(())
}

pub fn shift_json(s: &ShiftStudy) -> Value {
    json!({
        "param": s.param,
        "rho_L": s.rho_unshifted,
        "sigma_L": s.bound.sigma_l,
        "mu_min": s.bound.mu_min,
        "q_asymmetry": json_f64(s.bound.asymmetry),
        "rho_at_sigma_L_plus_0.1": json_f64(s.rho_above_bound),
        "sigma_star": s.sigma_star,
        "rho_star": s.rho_star,
    })
}
