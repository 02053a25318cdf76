//! Local convergence analysis at a solution `X★`: the linearization
//! operators 𝓛, 𝓛σ, 𝓠, their spectral radii, the level-shift bound σ_L and
//! observed rates from iteration histories.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;

use crate::aligned::AlignedPoint;
use crate::alignment::{align, regularity_check, RegularityReport, RegularityTols};
use crate::error::{NepvError, Result};
use crate::linalg::{
    asymmetry, matricize, polar_orthonormalize, spectral_radius, sym_eig, symmetrize,
    LinearOperator, Mat, SpectralMethod, SpectralOptions, DEFAULT_SYM_TOL,
};
use crate::problem::{nres_of, NepvProblem, StiefelPoint};
use crate::scf::ScfReport;

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    /// Largest NRes (of `G` at `X★`) accepted.
    pub cert_tol: f64,
    /// Largest `‖sin Θ‖_F` between `X★` and the top-`k` eigenspace of `G(X★)`.
    pub subspace_tol: f64,
    pub regularity: RegularityTols,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            cert_tol: 1e-10,
            subspace_tol: 1e-8,
            regularity: RegularityTols::default(),
        }
    }
}

/// Eigendecomposition of `G(X★)` split at `k`, with `X★` as the top block.
#[derive(Debug, Clone)]
pub struct SolutionCertificate {
    /// `X★` rotated onto the eigenvector basis of `G(X★)`'s top block.
    pub x_star: StiefelPoint,
    /// `λ_1 ≥ … ≥ λ_k`.
    pub lambda_star: Vec<f64>,
    /// `λ_{k+1} ≥ … ≥ λ_n`.
    pub lambda_perp: Vec<f64>,
    /// `n × (n−k)`.
    pub x_perp: Mat,
    /// `λ_k − λ_{k+1}`.
    pub gap: f64,
    pub regular: RegularityReport,
    pub nres_at_star: f64,
    /// Distance of the input basis from the top-`k` eigenspace.
    pub sin_theta: f64,
}

/// Builds the certificate at a converged solution.
pub fn certify(
    p: &NepvProblem,
    x: &StiefelPoint,
    opts: &CertifyOptions,
) -> Result<SolutionCertificate> {
    let (n, k) = (p.n(), p.k());
    if k >= n {
        return Err(NepvError::InvalidArgument(
            "rate analysis needs k < n".into(),
        ));
    }
    let xa = align(x, p.d())?.aligned_x;
    let regular = regularity_check(&xa, p.d(), &opts.regularity)?;
    let point = AlignedPoint::new(p, xa.as_mat())?;
    let g = point.g();
    let nres_at_star = nres_of(g, xa.as_mat())?;
    if !(nres_at_star <= opts.cert_tol) {
        return Err(NepvError::NotConverged {
            nres: nres_at_star,
            tol: opts.cert_tol,
        });
    }
    let eig = sym_eig(g, DEFAULT_SYM_TOL)?;
    let v1 = eig.vectors.columns(0, k).into_owned();
    let xm = xa.as_mat();
    let sin_theta = (xm - &v1 * (v1.transpose() * xm)).norm();
    if !(sin_theta <= opts.subspace_tol) {
        return Err(NepvError::Mispositioned { sin_theta });
    }
    let gap = eig.values[k - 1] - eig.values[k];
    if !(gap > 0.0) {
        return Err(NepvError::GapNotPositive { gap });
    }
    // Rotate X onto the eigenbasis without leaving its span.
    let q = polar_orthonormalize(&(xm.transpose() * &v1));
    let x_star = StiefelPoint::orthonormalized(xm * q)?;
    Ok(SolutionCertificate {
        x_star,
        lambda_star: eig.values[..k].to_vec(),
        lambda_perp: eig.values[k..].to_vec(),
        x_perp: eig.vectors.columns(k, n - k).into_owned(),
        gap,
        regular,
        nres_at_star,
        sin_theta,
    })
}

/// The rate operators at a certified solution.
#[derive(Debug, Clone)]
pub struct RateOperators<'p> {
    cert: SolutionCertificate,
    point: AlignedPoint<'p>,
    /// `λ_j − λ_{k+i}` at `(i, j)`.
    denom: Mat,
}

impl<'p> RateOperators<'p> {
    pub fn new(p: &'p NepvProblem, cert: SolutionCertificate) -> Result<Self> {
        if !(cert.gap > 0.0) {
            return Err(NepvError::GapNotPositive { gap: cert.gap });
        }
        let point = AlignedPoint::new(p, cert.x_star.as_mat())?;
        let (m, k) = (cert.lambda_perp.len(), cert.lambda_star.len());
        let denom = Mat::from_fn(m, k, |i, j| cert.lambda_star[j] - cert.lambda_perp[i]);
        Ok(Self { cert, point, denom })
    }

    pub fn certificate(&self) -> &SolutionCertificate {
        &self.cert
    }

    pub fn rows(&self) -> usize {
        self.denom.nrows()
    }

    pub fn cols(&self) -> usize {
        self.denom.ncols()
    }

    fn check(&self, z: &Mat) -> Result<()> {
        if z.shape() != self.denom.shape() {
            return Err(NepvError::DimensionMismatch(format!(
                "Z {:?}, expected {:?}",
                z.shape(),
                self.denom.shape()
            )));
        }
        Ok(())
    }

    /// `X★⊥ᵀ·DG(X★)[X★⊥·Z]·X★`.
    fn projected_dg(&self, z: &Mat) -> Result<Mat> {
        let xp = &self.cert.x_perp;
        let dgv = self.point.dg(&(xp * z))?;
        Ok(xp.transpose() * (dgv * self.cert.x_star.as_mat()))
    }

    /// `𝓛(Z) = S ⊙ (X★⊥ᵀ DG(X★)[X★⊥Z] X★)`, `S_ij = 1/(λ_j − λ_{k+i})`.
    pub fn apply_l(&self, z: &Mat) -> Result<Mat> {
        self.check(z)?;
        Ok(self.projected_dg(z)?.component_div(&self.denom))
    }

    /// `𝓠(Z) = Λ★⊥Z − ZΛ★ + X★⊥ᵀ DG(X★)[X★⊥Z] X★`.
    pub fn apply_q(&self, z: &Mat) -> Result<Mat> {
        self.check(z)?;
        Ok(self.projected_dg(z)? - z.component_mul(&self.denom))
    }

    /// Denominators `λ_j − λ_{k+i} + σ`, rejecting near-zero or negative ones.
    fn shifted_denominators(&self, sigma: f64) -> Result<Mat> {
        let scale = self
            .cert
            .lambda_star
            .iter()
            .chain(&self.cert.lambda_perp)
            .fold(1.0_f64, |a, v| a.max(v.abs()));
        let den = self.denom.add_scalar(sigma);
        let min = den.min();
        if !(min > 1e-12 * scale) {
            return Err(NepvError::SingularScaling { denominator: min });
        }
        Ok(den)
    }

    /// `𝓛σ(Z) = S_σ ⊙ 𝓠(Z) + Z`.
    pub fn apply_l_shifted(&self, z: &Mat, sigma: f64) -> Result<Mat> {
        let den = self.shifted_denominators(sigma)?;
        Ok(self.apply_q(z)?.component_div(&den) + z)
    }

    pub fn l_operator(&self) -> LOperator<'_, 'p> {
        LOperator {
            ops: self,
            sigma: None,
        }
    }

    pub fn l_shifted_operator(&self, sigma: f64) -> Result<LOperator<'_, 'p>> {
        self.shifted_denominators(sigma)?;
        Ok(LOperator {
            ops: self,
            sigma: Some(sigma),
        })
    }

    pub fn q_operator(&self) -> QOperator<'_, 'p> {
        QOperator {
            ops: self,
            shift: 0.0,
        }
    }

    /// `ρ(𝓛)` or, with `sigma`, `ρ(𝓛σ)`.
    pub fn rho(&self, sigma: Option<f64>, opts: &SpectralOptions) -> Result<RateEstimate> {
        let sr = match sigma {
            None => spectral_radius(&self.l_operator(), opts)?,
            Some(s) => spectral_radius(&self.l_shifted_operator(s)?, opts)?,
        };
        Ok(RateEstimate {
            rho: sr.rho,
            method: sr.method,
            converged: sr.converged,
            sigma,
            bound: None,
        })
    }

    /// `σ_L = −μ_min/2 − (λ_k − λ_{k+1})` with `μ_min` the smallest eigenvalue
    /// of the symmetrized matricization of 𝓠.
    pub fn sigma_lower(&self, opts: &SpectralOptions) -> Result<SigmaBound> {
        let q = self.q_operator();
        let dim = q.dim();
        let use_dense = match opts.method {
            SpectralMethod::Dense => true,
            SpectralMethod::Power => false,
            SpectralMethod::Auto => dim <= opts.dense_cap,
        };
        if use_dense {
            if dim > opts.dense_cap {
                return Err(NepvError::DenseCapExceeded {
                    dim,
                    cap: opts.dense_cap,
                });
            }
            let k = matricize(&q)?;
            let asym = asymmetry(&k);
            let mu_min = sym_eig(&symmetrize(&k), f64::INFINITY)?
                .values
                .last()
                .copied()
                .unwrap_or(0.0);
            return Ok(self.bound_from(mu_min, Some(asym), SpectralMethod::Dense, true));
        }
        // Matrix-free: for symmetric 𝓠 with radius ν, ρ(𝓠 − νI) = ν − μ_min.
        let nu = spectral_radius(&q, opts)?;
        let shifted = QOperator {
            ops: self,
            shift: nu.rho,
        };
        let r = spectral_radius(&shifted, opts)?;
        Ok(self.bound_from(
            nu.rho - r.rho,
            None,
            SpectralMethod::Power,
            nu.converged && r.converged,
        ))
    }

    fn bound_from(
        &self,
        mu_min: f64,
        asym: Option<f64>,
        method: SpectralMethod,
        converged: bool,
    ) -> SigmaBound {
        SigmaBound {
            sigma_l: -mu_min / 2.0 - self.cert.gap,
            mu_min,
            asymmetry: asym,
            method,
            converged,
        }
    }

    /// `tr(Zᵀ𝓠(Z))`.
    pub fn quadratic_form(&self, z: &Mat) -> Result<f64> {
        Ok(crate::linalg::trace_product(z, &self.apply_q(z)?))
    }
}

/// 𝓛 or 𝓛σ as a [`LinearOperator`].
#[derive(Debug, Clone, Copy)]
pub struct LOperator<'a, 'p> {
    ops: &'a RateOperators<'p>,
    sigma: Option<f64>,
}

impl LinearOperator for LOperator<'_, '_> {
    fn rows(&self) -> usize {
        self.ops.rows()
    }
    fn cols(&self) -> usize {
        self.ops.cols()
    }
    fn apply(&self, z: &Mat) -> Result<Mat> {
        match self.sigma {
            None => self.ops.apply_l(z),
            Some(s) => self.ops.apply_l_shifted(z, s),
        }
    }
}

/// `𝓠 − shift·I` as a [`LinearOperator`].
#[derive(Debug, Clone, Copy)]
pub struct QOperator<'a, 'p> {
    ops: &'a RateOperators<'p>,
    shift: f64,
}

impl LinearOperator for QOperator<'_, '_> {
    fn rows(&self) -> usize {
        self.ops.rows()
    }
    fn cols(&self) -> usize {
        self.ops.cols()
    }
    fn apply(&self, z: &Mat) -> Result<Mat> {
        let q = self.ops.apply_q(z)?;
        Ok(if self.shift == 0.0 {
            q
        } else {
            q - z * self.shift
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RateEstimate {
    pub rho: f64,
    pub method: SpectralMethod,
    pub converged: bool,
    pub sigma: Option<f64>,
    pub bound: Option<SigmaBound>,
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaBound {
    pub sigma_l: f64,
    pub mu_min: f64,
    /// `‖K − Kᵀ‖_F/‖K‖_F`, only available on the dense path.
    pub asymmetry: Option<f64>,
    pub method: SpectralMethod,
    pub converged: bool,
}

impl SigmaBound {
    /// `true` when the asymmetry diagnostic exceeds `tol`.
    pub fn asymmetry_warning(&self, tol: f64) -> bool {
        self.asymmetry.is_some_and(|a| a > tol)
    }
}

/// `ρ(𝓛)` or `ρ(𝓛σ)` for a certified solution.
pub fn rho_l(
    p: &NepvProblem,
    cert: &SolutionCertificate,
    sigma: Option<f64>,
    opts: &SpectralOptions,
) -> Result<RateEstimate> {
    RateOperators::new(p, cert.clone())?.rho(sigma, opts)
}

/// σ_L and μ_min for a certified solution.
pub fn sigma_lower(
    p: &NepvProblem,
    cert: &SolutionCertificate,
    opts: &SpectralOptions,
) -> Result<SigmaBound> {
    RateOperators::new(p, cert.clone())?.sigma_lower(opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateEstimator {
    /// `exp` of the least-squares slope of `ln e_i` against `i` over the
    /// asymptotic tail (values between the floor and `decay_threshold`).
    /// Robust to the period-2 wobble of a complex dominant pair.
    LogFit,
    /// Geometric mean of the last `ratios` successive ratios.
    TailGeometric,
}

#[derive(Debug, Clone, Copy)]
pub struct RateWindow {
    /// Values at or below this are censored, together with everything after.
    pub floor: f64,
    /// Number of trailing ratios averaged by [`RateEstimator::TailGeometric`].
    pub ratios: usize,
    /// Fewest uncensored values accepted.
    pub min_values: usize,
    /// The uncensored values must reach below this; it also starts the
    /// asymptotic tail for [`RateEstimator::LogFit`].
    pub decay_threshold: f64,
    /// [`RateEstimator::LogFit`] fits only this trailing fraction of the
    /// tail; early values of a run started near `X★` are still transient.
    pub tail_fraction: f64,
    pub estimator: RateEstimator,
}

impl Default for RateWindow {
    fn default() -> Self {
        Self {
            floor: 1e-12,
            ratios: 10,
            min_values: 6,
            decay_threshold: 1e-3,
            tail_fraction: 0.5,
            estimator: RateEstimator::LogFit,
        }
    }
}

/// Asymptotic contraction factor of a decaying error sequence.
pub fn tail_rate(errors: &[f64], window: &RateWindow) -> Result<f64> {
    let kept: Vec<f64> = errors
        .iter()
        .copied()
        .take_while(|e| e.is_finite() && *e > window.floor)
        .collect();
    if kept.len() < window.min_values.max(2) {
        return Err(NepvError::UndefinedRate(format!(
            "{} values above the floor {:e}, need {}",
            kept.len(),
            window.floor,
            window.min_values
        )));
    }
    let smallest = kept.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest < window.decay_threshold) {
        return Err(NepvError::UndefinedRate(format!(
            "errors never fall below {:e} (smallest {smallest:e})",
            window.decay_threshold
        )));
    }
    let last = kept.len() - 1;
    match window.estimator {
        RateEstimator::TailGeometric => {
            let span = window.ratios.max(1).min(last);
            Ok((kept[last] / kept[last - span]).powf(1.0 / span as f64))
        }
        RateEstimator::LogFit => {
            // First index of the tail, keeping at least three points.
            let first_below = kept
                .iter()
                .position(|&e| e < window.decay_threshold)
                .unwrap_or(last);
            let len = (last + 1 - first_below) as f64;
            let skip = (len * (1.0 - window.tail_fraction.clamp(0.0, 1.0))).floor() as usize;
            let start = (first_below + skip).min(last.saturating_sub(2));
            let pts = &kept[start..];
            let m = pts.len() as f64;
            let mean_i = (m - 1.0) / 2.0;
            let mean_y = pts.iter().map(|e| e.ln()).sum::<f64>() / m;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (i, e) in pts.iter().enumerate() {
                let dx = i as f64 - mean_i;
                sxy += dx * (e.ln() - mean_y);
                sxx += dx * dx;
            }
            Ok((sxy / sxx).exp())
        }
    }
}

/// Rate from `‖sin Θ(X_i, X★)‖_F` recorded in the report.
pub fn observed_rate(report: &ScfReport, window: &RateWindow) -> Result<f64> {
    let s = report.sin_theta_history();
    if s.len() != report.history.len() || s.is_empty() {
        return Err(NepvError::UndefinedRate(
            "history has no angles to a reference".into(),
        ));
    }
    tail_rate(&s, window)
}

/// Rate from the NRes trajectory.
pub fn observed_rate_nres(report: &ScfReport, window: &RateWindow) -> Result<f64> {
    tail_rate(&report.nres_history(), window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_quadratic_problem;
    use nalgebra::DVector;

    fn constant_problem() -> (NepvProblem, StiefelPoint) {
        let a = Mat::from_diagonal(&DVector::from_vec(alloc::vec![2.0, 0.5, 1.5, -1.0]));
        let p = make_quadratic_problem(&a, &Mat::zeros(4, 2), 1.0).unwrap();
        let x = Mat::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        (p, StiefelPoint::new(x).unwrap())
    }

    #[test]
    fn synthetic_rate() {
        let e: Vec<f64> = (0..40).map(|i| 0.5 * 0.3_f64.powi(i)).collect();
        assert!((tail_rate(&e, &RateWindow::default()).unwrap() - 0.3).abs() < 1e-6);
        let geo = RateWindow {
            estimator: RateEstimator::TailGeometric,
            ..Default::default()
        };
        assert!((tail_rate(&e, &geo).unwrap() - 0.3).abs() < 1e-6);
        assert!(tail_rate(&e[..4], &RateWindow::default()).is_err());
        assert!(tail_rate(&[0.5; 20], &RateWindow::default()).is_err());
    }

    #[test]
    fn constant_h_certificate() {
        let (p, x) = constant_problem();
        let cert = certify(&p, &x, &CertifyOptions::default()).unwrap();
        // H = 2A: eigenvalues 4, 3, 1, -2
        assert!((cert.gap - 2.0).abs() < 1e-12);
        assert_eq!(cert.lambda_star.len(), 2);
        let ops = RateOperators::new(&p, cert).unwrap();
        let z = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(ops.apply_l(&z).unwrap().norm() < 1e-14);
        // 𝓠(Z) = Λ⊥Z − ZΛ★
        let expect = Mat::from_fn(2, 2, |i, j| ([1.0, -2.0][i] - [4.0, 3.0][j]) * z[(i, j)]);
        assert!((ops.apply_q(&z).unwrap() - expect).norm() < 1e-13);
        let shifted = ops.apply_l_shifted(&z, 0.0).unwrap();
        assert!(shifted.norm() < 1e-13);
        assert!(matches!(
            ops.apply_l_shifted(&z, -2.0),
            Err(NepvError::SingularScaling { .. })
        ));
    }

    #[test]
    fn mispositioned_solution_is_rejected() {
        let (p, _) = constant_problem();
        // eigenvectors for 4 and -2: an eigenbasis, but not the top one
        let x = StiefelPoint::new(Mat::from_row_slice(
            4,
            2,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        assert!(matches!(
            certify(&p, &x, &CertifyOptions::default()),
            Err(NepvError::Mispositioned { .. })
        ));
    }

    #[test]
    fn unconverged_point_is_rejected() {
        let (p, _) = constant_problem();
        let x = StiefelPoint::orthonormalized(Mat::from_row_slice(
            4,
            2,
            &[1.0, 0.1, 0.2, 0.0, 0.0, 1.0, 0.0, 0.3],
        ))
        .unwrap();
        assert!(matches!(
            certify(&p, &x, &CertifyOptions::default()),
            Err(NepvError::NotConverged { .. })
        ));
    }
}
