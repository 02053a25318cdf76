//! Parameter continuation with warm starts, per-point rate analysis and the
//! search for the optimal level shift.

use alloc::vec::Vec;
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;

use crate::convergence::{
    certify, observed_rate, observed_rate_nres, CertifyOptions, RateOperators, RateWindow,
};
use crate::error::{NepvError, Result};
use crate::linalg::SpectralOptions;
use crate::problem::{NepvProblem, StiefelPoint};
use crate::scf::{run_scf, ScfOptions, ScfReport};

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub scf: ScfOptions,
    /// Shift for the level-shifted retry when plain SCF fails.
    pub fallback_shift: Option<f64>,
}

/// One solved grid point.
#[derive(Debug, Clone)]
pub struct SolvedPoint {
    pub param: f64,
    /// Start used for this point (the warm start).
    pub start: StiefelPoint,
    /// Plain SCF outcome.
    pub plain: ScfReport,
    /// Level-shifted retry, present when plain SCF failed and a fallback
    /// shift is configured.
    pub shifted: Option<ScfReport>,
    pub fallback_shift: Option<f64>,
}

impl SolvedPoint {
    /// Converged solution, from the plain run if possible.
    pub fn solution(&self) -> Option<&StiefelPoint> {
        if self.plain.converged {
            return Some(&self.plain.final_x);
        }
        self.shifted
            .as_ref()
            .filter(|r| r.converged)
            .map(|r| &r.final_x)
    }

    /// Shift that produced the solution: `0` for plain SCF, the fallback σ
    /// for the shifted retry, `None` when neither converged.
    pub fn sigma_used(&self) -> Option<f64> {
        if self.plain.converged {
            return Some(0.0);
        }
        match &self.shifted {
            Some(r) if r.converged => self.fallback_shift,
            _ => None,
        }
    }
}

/// Solves the problems `make(param)` in order, each warm-started from the
/// last converged solution.
pub fn continuation<F>(
    make: F,
    params: &[f64],
    x0: &StiefelPoint,
    opts: &ContinuationOptions,
) -> Result<Vec<SolvedPoint>>
where
    F: Fn(f64) -> Result<NepvProblem>,
{
    let mut start = x0.clone();
    let mut out = Vec::with_capacity(params.len());
    let plain_opts = ScfOptions {
        shift: None,
        reference: None,
        ..opts.scf.clone()
    };
    for &param in params {
        let p = make(param)?;
        let plain = run_scf(&p, &start, &plain_opts)?;
        let shifted = match (plain.converged, opts.fallback_shift) {
            (false, Some(sigma)) => Some(run_scf(
                &p,
                &start,
                &ScfOptions {
                    shift: Some(sigma),
                    ..plain_opts.clone()
                },
            )?),
            _ => None,
        };
        let point = SolvedPoint {
            param,
            start: start.clone(),
            plain,
            shifted,
            fallback_shift: opts.fallback_shift,
        };
        if let Some(x) = point.solution() {
            start = x.clone();
        }
        out.push(point);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    pub certify: CertifyOptions,
    pub spectral: SpectralOptions,
    pub window: RateWindow,
    /// Skip the observed-rate re-run, e.g. when plain SCF is known to fail.
    pub skip_rerun: bool,
}

/// Rate data at one solution.
#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub gap: Option<f64>,
    pub rho: Option<f64>,
    pub rho_converged: bool,
    /// Angle-based observed rate of the given run.
    pub observed_rate: Option<f64>,
    pub observed_rate_nres: Option<f64>,
    pub regular: bool,
    /// The re-run from the start with `‖sin Θ‖` tracked against the
    /// polished solution.
    pub rerun: Option<ScfReport>,
    /// Why the rate analysis stopped early, if it did.
    pub error: Option<NepvError>,
}

/// Certifies `solution`, computes `ρ(𝓛)` (or `ρ(𝓛σ)` with `sigma`) and
/// re-runs SCF from `start` with the solution as reference to measure the
/// observed rate.
pub fn analyze_point(
    p: &NepvProblem,
    solution: &StiefelPoint,
    start: &StiefelPoint,
    sigma: Option<f64>,
    scf: &ScfOptions,
    opts: &AnalysisOptions,
) -> PointAnalysis {
    let mut out = PointAnalysis {
        gap: None,
        rho: None,
        rho_converged: false,
        observed_rate: None,
        observed_rate_nres: None,
        regular: false,
        rerun: None,
        error: None,
    };
    let cert = match certify(p, solution, &opts.certify) {
        Ok(c) => c,
        Err(e) => {
            out.error = Some(e);
            return out;
        }
    };
    out.gap = Some(cert.gap);
    out.regular = cert.regular.is_regular();
    let mut x_star = cert.x_star.clone();
    match RateOperators::new(p, cert).and_then(|ops| ops.rho(sigma, &opts.spectral)) {
        Ok(r) => {
            out.rho = Some(r.rho);
            out.rho_converged = r.converged;
            if let Some(x) = polish(p, &x_star, sigma, r.rho, scf.max_iters) {
                x_star = x;
            }
        }
        Err(e) => out.error = Some(e),
    }
    if opts.skip_rerun {
        return out;
    }
    let rerun = ScfOptions {
        shift: sigma,
        reference: Some(x_star),
        record_history: true,
        ..scf.clone()
    };
    match run_scf(p, start, &rerun) {
        Ok(report) => {
            out.observed_rate = observed_rate(&report, &opts.window).ok();
            out.observed_rate_nres = observed_rate_nres(&report, &opts.window).ok();
            out.rerun = Some(report);
        }
        Err(e) => out.error = out.error.take().or(Some(e)),
    }
    out
}

/// Pushes a converged solution to working precision with extra SCF steps,
/// enough to shrink the error by about `1e−5` at the contraction rate `rho`.
/// A reference accurate only to the stopping tolerance biases the last
/// ratios of the angle history.
fn polish(
    p: &NepvProblem,
    x: &StiefelPoint,
    sigma: Option<f64>,
    rho: f64,
    cap: usize,
) -> Option<StiefelPoint> {
    if !(rho < 1.0) {
        return None;
    }
    let steps = if rho <= 0.0 {
        20.0
    } else {
        (1e-5_f64.ln() / rho.ln()).ceil() + 20.0
    };
    let opts = ScfOptions {
        tol: f64::MIN_POSITIVE,
        max_iters: (steps as usize).clamp(20, cap.max(20)),
        shift: sigma,
        record_history: false,
        ..Default::default()
    };
    run_scf(p, x, &opts).ok().map(|r| r.final_x)
}

/// Minimizes `σ ↦ ρ(𝓛σ)` over `[lo, hi]`: grid search on `grid` points,
/// then golden-section refinement around the best grid point. Shifts with
/// a singular scaling are skipped.
pub fn optimal_shift(
    ops: &RateOperators<'_>,
    lo: f64,
    hi: f64,
    grid: usize,
    spectral: &SpectralOptions,
) -> Result<(f64, f64)> {
    if !(hi > lo) || grid < 3 {
        return Err(NepvError::InvalidArgument(
            "need lo < hi and at least 3 grid points".into(),
        ));
    }
    let rho = |s: f64| -> f64 {
        ops.rho(Some(s), spectral)
            .map(|r| r.rho)
            .unwrap_or(f64::INFINITY)
    };
    let h = (hi - lo) / (grid - 1) as f64;
    let (mut best_i, mut best) = (0, f64::INFINITY);
    for i in 0..grid {
        let v = rho(lo + h * i as f64);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    if !best.is_finite() {
        return Err(NepvError::UndefinedRate(
            "no admissible shift in the search interval".into(),
        ));
    }
    let (mut a, mut b) = (
        lo + h * best_i.saturating_sub(1) as f64,
        lo + h * (best_i + 1).min(grid - 1) as f64,
    );
    let g = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (rho(c), rho(d));
    let tol = 1e-8 * (1.0 + lo.abs().max(hi.abs()));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = rho(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = rho(d);
        }
    }
    let (s, v) = if fc < fd { (c, fc) } else { (d, fd) };
    let grid_point = lo + h * best_i as f64;
    Ok(if v <= best {
        (s, v)
    } else {
        (grid_point, best)
    })
}

/// `count` equally spaced points on `[start, stop]`.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.0, 1.0, 5);
        assert_eq!(v, alloc::vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(linspace(2.0, 3.0, 1), alloc::vec![2.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }
}
