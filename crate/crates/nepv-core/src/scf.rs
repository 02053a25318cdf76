//! The aligned SCF iteration and its level-shifted variant.

use alloc::vec::Vec;

use nalgebra::Cholesky;

use crate::alignment::align;
use crate::error::{NepvError, Result};
use crate::linalg::{one_norm, sym_eig_topk, Mat, DEFAULT_SYM_TOL};
use crate::problem::{nres_of, NepvProblem, StiefelPoint};

#[derive(Debug, Clone)]
pub struct ScfOptions {
    pub tol: f64,
    /// Maximum number of SCF steps.
    pub max_iters: usize,
    /// Level shift σ; `None` is the plain iteration.
    pub shift: Option<f64>,
    /// `X★` for tracking `‖sin Θ(X_i, X★)‖_F`.
    pub reference: Option<StiefelPoint>,
    pub record_history: bool,
    /// Number of trailing NRes values inspected by the oscillation detector.
    pub oscillation_window: usize,
    /// Relative band for "same level" in the oscillation detector.
    pub oscillation_band: f64,
    /// Stop as soon as a two-cycle is detected instead of running to
    /// `max_iters`.
    pub stop_on_oscillation: bool,
    /// Gaps `λ_k − λ_{k+1}` below `gap_tol·‖H‖₁` are counted as degenerate.
    pub gap_tol: f64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iters: 500,
            shift: None,
            reference: None,
            record_history: true,
            oscillation_window: 6,
            oscillation_band: 1e-3,
            stop_on_oscillation: false,
            gap_tol: 1e-12,
        }
    }
}

impl ScfOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(NepvError::InvalidArgument(alloc::format!(
                "tol = {:e} must be positive and max_iters = {} at least 1",
                self.tol,
                self.max_iters
            )));
        }
        if self.oscillation_window < 4 {
            return Err(NepvError::InvalidArgument(
                "oscillation_window must be at least 4".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics at one iterate `X_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub nres: f64,
    pub objective: f64,
    /// `λ_k − λ_{k+1}` of `H(X_i) + σX_iX_iᵀ`; `None` when `k = n`.
    pub gap: Option<f64>,
    pub sin_theta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    None,
    MaxIters,
    /// NRes settled into a two-cycle.
    Oscillation,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct ScfReport {
    pub final_x: StiefelPoint,
    /// `XᵀH(X)X` at the final iterate.
    pub final_lambda: Mat,
    pub converged: bool,
    /// Number of iterates evaluated, counting `X_0`; equals the history
    /// length when history is recorded.
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    pub divergence: Divergence,
    /// Steps whose eigenvalue gap fell below the degenerate threshold.
    pub degenerate_gap_steps: usize,
    pub final_nres: f64,
}

impl ScfReport {
    pub fn nres_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.nres).collect()
    }

    pub fn sin_theta_history(&self) -> Vec<f64> {
        self.history.iter().filter_map(|h| h.sin_theta).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScfStep {
    pub next: StiefelPoint,
    /// `X̃ᵀ(H + σXXᵀ)X̃` in the aligned basis.
    pub lambda: Mat,
    pub gap: Option<f64>,
}

fn shifted(h: &Mat, x: &Mat, shift: f64) -> Mat {
    if shift == 0.0 {
        h.clone()
    } else {
        h + x * x.transpose() * shift
    }
}

fn step_from(h_shifted: &Mat, d: &Mat, k: usize) -> Result<ScfStep> {
    let top = sym_eig_topk(h_shifted, k, DEFAULT_SYM_TOL)?;
    let gap = top.gap();
    let xt = StiefelPoint::orthonormalized(top.vectors)?;
    let al = align(&xt, d)?;
    let lam = Mat::from_diagonal(&nalgebra::DVector::from_vec(top.values));
    let lambda = al.q.transpose() * lam * &al.q;
    Ok(ScfStep {
        next: al.aligned_x,
        lambda,
        gap,
    })
}

/// One step: top-`k` eigenbasis of `H(X) + σXXᵀ`, then alignment.
pub fn scf_step(p: &NepvProblem, x: &StiefelPoint, shift: f64) -> Result<ScfStep> {
    let h = p.build_h(x)?;
    step_from(&shifted(&h, x.as_mat(), shift), p.d(), p.k())
}

/// Two-cycle test on the trailing window: alternating differences,
/// `r_i ≈ r_{i−2}` and two distinct levels.
pub fn detect_oscillation(nres: &[f64], window: usize, band: f64) -> bool {
    if nres.len() < window || window < 4 {
        return false;
    }
    let w = &nres[nres.len() - window..];
    let zigzag = w.windows(3).all(|t| (t[1] - t[0]) * (t[2] - t[1]) < 0.0);
    let periodic = w
        .windows(3)
        .all(|t| (t[2] - t[0]).abs() <= band * t[2].abs());
    let last = w[window - 1];
    let split = (last - w[window - 2]).abs() > band * last.abs();
    zigzag && periodic && split
}

fn sin_theta_to(x: &Mat, reference: &Mat) -> f64 {
    (x - reference * (reference.transpose() * x)).norm()
}

/// SCF iteration from `x0`, level-shifted when `opts.shift` is set.
pub fn run_scf(p: &NepvProblem, x0: &StiefelPoint, opts: &ScfOptions) -> Result<ScfReport> {
    opts.validate()?;
    p.check_shape(x0.as_mat())?;
    if let Some(r) = &opts.reference {
        p.check_shape(r.as_mat())?;
    }
    let shift = opts.shift.unwrap_or(0.0);
    let k = p.k();
    let mut x = align(x0, p.d())?.aligned_x;
    let mut history = Vec::new();
    let mut nres_trace = Vec::new();
    let mut degenerate = 0;
    let mut evaluated = 0;
    loop {
        let h = p.build_h(&x)?;
        let nres = nres_of(&h, x.as_mat())?;
        evaluated += 1;
        let finite = nres.is_finite();
        let converged = finite && nres <= opts.tol;
        let at_limit = evaluated > opts.max_iters;
        let hs = shifted(&h, x.as_mat(), shift);
        // The eigen-solve is skipped only when it will not be used.
        let step = if converged || at_limit || !finite {
            None
        } else {
            Some(step_from(&hs, p.d(), k)?)
        };
        let gap = match &step {
            Some(s) => s.gap,
            None if opts.record_history && finite => sym_eig_topk(&hs, k, DEFAULT_SYM_TOL)?.gap(),
            None => None,
        };
        if let Some(g) = gap {
            if g <= opts.gap_tol * one_norm(&h) {
                degenerate += 1;
            }
        }
        nres_trace.push(nres);
        if opts.record_history {
            history.push(HistoryEntry {
                nres,
                objective: if finite { p.objective(&x)? } else { f64::NAN },
                gap,
                sin_theta: opts
                    .reference
                    .as_ref()
                    .map(|r| sin_theta_to(x.as_mat(), r.as_mat())),
            });
        }
        let oscillating =
            detect_oscillation(&nres_trace, opts.oscillation_window, opts.oscillation_band);
        let divergence = if converged {
            Some(Divergence::None)
        } else if !finite {
            Some(Divergence::NonFinite)
        } else if oscillating && opts.stop_on_oscillation {
            Some(Divergence::Oscillation)
        } else if at_limit {
            Some(if oscillating {
                Divergence::Oscillation
            } else {
                Divergence::MaxIters
            })
        } else {
            None
        };
        if let Some(divergence) = divergence {
            let xm = x.as_mat();
            let final_lambda = crate::linalg::symmetrize(&(xm.transpose() * &h * xm));
            return Ok(ScfReport {
                final_x: x,
                final_lambda,
                converged,
                iterations: evaluated,
                history,
                divergence,
                degenerate_gap_steps: degenerate,
                final_nres: nres,
            });
        }
        x = step.expect("step computed when iterating").next;
    }
}

/// Level-shifted SCF with the operator `H(X) + σXXᵀ`.
pub fn run_level_shifted_scf(
    p: &NepvProblem,
    x0: &StiefelPoint,
    sigma: f64,
    opts: &ScfOptions,
) -> Result<ScfReport> {
    let opts = ScfOptions {
        shift: Some(sigma),
        ..opts.clone()
    };
    run_scf(p, x0, &opts)
}

/// Top-`k` eigenvectors of the pencil `(A, B)`, orthonormalized by their
/// polar factor and, when `d` is given, aligned against it.
pub fn initial_guess_linear(a: &Mat, b: &Mat, k: usize, d: Option<&Mat>) -> Result<StiefelPoint> {
    let chol = Cholesky::new(b.clone())
        .ok_or_else(|| NepvError::NotPositiveDefinite("B has no Cholesky factorization".into()))?;
    let l = chol.l();
    let l_inv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| NepvError::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&l_inv_a.transpose())
        .ok_or_else(|| NepvError::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let top = sym_eig_topk(&crate::linalg::symmetrize(&c), k, 1e-8)?;
    let v = l
        .transpose()
        .solve_upper_triangular(&top.vectors)
        .ok_or_else(|| NepvError::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let x = StiefelPoint::orthonormalized(v)?;
    match d {
        Some(d) => Ok(align(&x, d)?.aligned_x),
        None => Ok(x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::{make_alpha_problem, make_quadratic_problem};

    #[test]
    fn oscillation_detector() {
        let two_cycle = [0.5, 0.3, 0.2077, 0.1573, 0.2077, 0.1573, 0.2077, 0.1573];
        assert!(detect_oscillation(&two_cycle, 6, 1e-3));
        let decaying = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03, 0.015];
        assert!(!detect_oscillation(&decaying, 6, 1e-3));
        let flat = [0.2; 8];
        assert!(!detect_oscillation(&flat, 6, 1e-3));
    }

    #[test]
    fn pencil_guess_with_identity_b() {
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![1.0, 5.0, 3.0]));
        let x = initial_guess_linear(&a, &Mat::identity(3, 3), 2, None).unwrap();
        let e2 = x.as_mat().row(1).norm();
        let e3 = x.as_mat().row(2).norm();
        assert!((e2 - 1.0).abs() < 1e-12 && (e3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pencil_guess_is_orthonormal_and_aligned() {
        let (a, b, d) = presets::example2();
        let x = initial_guess_linear(&a, &b, 2, Some(&d)).unwrap();
        assert!(crate::linalg::orthonormality_drift(x.as_mat()) < 1e-12);
        let xd = x.as_mat().transpose() * &d;
        assert!(crate::linalg::asymmetry(&xd) < 1e-12);
        assert!(crate::linalg::sym_eig(&xd, 1e-10).unwrap().values[1] >= 0.0);
    }

    #[test]
    fn constant_h_converges_in_one_step() {
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![3.0, 1.0, 2.0]));
        let p = make_quadratic_problem(&a, &Mat::zeros(3, 1), 1.0).unwrap();
        let x0 =
            StiefelPoint::orthonormalized(Mat::from_column_slice(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let r = run_scf(&p, &x0, &ScfOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.history.len(), r.iterations);
        assert!((r.final_lambda[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_options() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, 0.2).unwrap();
        let x0 = initial_guess_linear(&a, &b, 1, Some(&d)).unwrap();
        let bad = ScfOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(run_scf(&p, &x0, &bad).is_err());
        let bad = ScfOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(run_scf(&p, &x0, &bad).is_err());
    }

    #[test]
    fn max_iters_bounds_history() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, 0.6).unwrap();
        let x0 = initial_guess_linear(&a, &b, 1, Some(&d)).unwrap();
        let r = run_scf(
            &p,
            &x0,
            &ScfOptions {
                max_iters: 25,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 26);
        assert_ne!(r.divergence, Divergence::None);
    }
}
