//! Basis alignment `X ↦ XQ` maximizing `tr(QᵀXᵀD)`, the D-regularity tests,
//! the canonical polar decomposition `XᵀD = Q_o·M` and its derivatives.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{NepvError, Result};
use crate::linalg::{
    asymmetry, lyapunov_from_eig, svd_econ, sym_eig, symmetrize, Mat, SvdResult, DEFAULT_RANK_TOL,
};
use crate::problem::StiefelPoint;

/// `D = D1·Pᵀ` with `D1` of full column rank `r` and `P` orthonormal.
#[derive(Debug, Clone)]
pub struct DFactorization {
    /// `n × r`.
    pub d1: Mat,
    /// `k × r`.
    pub p: Mat,
    pub r: usize,
    pub rank_tol: f64,
}

/// Rank-revealing factorization from the SVD of `D`: `D1 = U_r Σ_r`, `P = V_r`.
/// `D = 0` gives `r = 0` and empty factors.
pub fn factor_d(d: &Mat, rank_tol: f64) -> Result<DFactorization> {
    let svd = svd_econ(d, rank_tol)?;
    let r = if svd.sigma.first().copied().unwrap_or(0.0) == 0.0 {
        0
    } else {
        svd.numerical_rank
    };
    let mut d1 = svd.u.columns(0, r).into_owned();
    for j in 0..r {
        d1.column_mut(j).scale_mut(svd.sigma[j]);
    }
    let p = svd.v.columns(0, r).into_owned();
    Ok(DFactorization { d1, p, r, rank_tol })
}

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub aligned_x: StiefelPoint,
    /// The orthogonal `k × k` rotation, `aligned_x = X·q`.
    pub q: Mat,
    /// SVD of `XᵀD` before alignment.
    pub svd: SvdResult,
    /// Numerical rank of `XᵀD`.
    pub ell: usize,
}

/// Rotates `X` so that `X̃ᵀD` is symmetric positive semidefinite.
///
/// `Q = U·Vᵀ` from `XᵀD = UΣVᵀ`; the free block on the null space of `XᵀD`
/// is fixed to the identity. `XᵀD = 0` returns `Q = I`.
pub fn align(x: &StiefelPoint, d: &Mat) -> Result<AlignmentResult> {
    let xm = x.as_mat();
    if xm.shape() != d.shape() {
        return Err(NepvError::DimensionMismatch(format!(
            "X {:?} vs D {:?}",
            xm.shape(),
            d.shape()
        )));
    }
    let k = xm.ncols();
    let svd = svd_econ(&(xm.transpose() * d), DEFAULT_RANK_TOL)?;
    let zero = svd.sigma[0] == 0.0;
    let ell = if zero { 0 } else { svd.numerical_rank };
    let q = if zero || already_aligned(&(xm.transpose() * d), svd.sigma[0]) {
        Mat::identity(k, k)
    } else {
        &svd.u * svd.v.transpose()
    };
    Ok(AlignmentResult {
        aligned_x: x.rotate(&q),
        q,
        svd,
        ell,
    })
}

/// `XᵀD` symmetric positive semidefinite to working precision, in which case
/// `Q = I` is one of the maximizers.
fn already_aligned(xd: &Mat, sigma1: f64) -> bool {
    if asymmetry(xd) > 1e-13 {
        return false;
    }
    match sym_eig(&symmetrize(xd), f64::INFINITY) {
        Ok(e) => e.values.last().is_none_or(|&v| v >= -1e-13 * sigma1),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegularityTols {
    /// Relative asymmetry allowed in `XᵀD`.
    pub sym_tol: f64,
    /// Negative eigenvalues of `sym(XᵀD)` down to `−psd_tol·σ₁` are accepted.
    pub psd_tol: f64,
    pub rank_tol: f64,
}

impl Default for RegularityTols {
    fn default() -> Self {
        Self {
            sym_tol: 1e-8,
            psd_tol: 1e-8,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    pub definite: bool,
    pub rank_preserving: bool,
    pub min_eig: f64,
    /// Numerical rank of `XᵀD`.
    pub ell: usize,
    /// Numerical rank of `D`.
    pub r: usize,
}

impl RegularityReport {
    pub fn is_regular(&self) -> bool {
        self.definite && self.rank_preserving
    }
}

/// Definiteness (`XᵀD ⪰ 0`) and rank preservation (`rank XᵀD = rank D`).
pub fn regularity_check(
    x: &StiefelPoint,
    d: &Mat,
    tols: &RegularityTols,
) -> Result<RegularityReport> {
    let xm = x.as_mat();
    if xm.shape() != d.shape() {
        return Err(NepvError::DimensionMismatch(format!(
            "X {:?} vs D {:?}",
            xm.shape(),
            d.shape()
        )));
    }
    let xd = xm.transpose() * d;
    let rank_of = |m: &Mat| -> Result<(usize, f64)> {
        let s = svd_econ(m, tols.rank_tol)?;
        let s1 = s.sigma.first().copied().unwrap_or(0.0);
        Ok((if s1 == 0.0 { 0 } else { s.numerical_rank }, s1))
    };
    let (ell, sigma1) = rank_of(&xd)?;
    let (r, _) = rank_of(d)?;
    let min_eig = sym_eig(&symmetrize(&xd), f64::INFINITY)?
        .values
        .last()
        .copied()
        .unwrap_or(0.0);
    let definite = asymmetry(&xd) <= tols.sym_tol && min_eig >= -tols.psd_tol * sigma1;
    Ok(RegularityReport {
        definite,
        rank_preserving: ell == r,
        min_eig,
        ell,
        r,
    })
}

/// `XᵀD = Q_o·M` with `Q_o = Q1·Pᵀ`, `M = P·M1·Pᵀ`, from the polar
/// decomposition `XᵀD1 = Q1·M1`.
#[derive(Debug, Clone)]
pub struct CanonicalPolarBundle {
    /// `k × k` partial isometry.
    pub q_o: Mat,
    /// `k × k` symmetric positive semidefinite.
    pub m: Mat,
    /// `k × r` orthonormal.
    pub q1: Mat,
    /// `r × r` symmetric positive definite.
    pub m1: Mat,
    /// Eigenvectors of `M1` (the right singular vectors of `XᵀD1`).
    pub(crate) w: Mat,
    /// Eigenvalues of `M1` (the singular values of `XᵀD1`).
    pub(crate) s: Vec<f64>,
    /// `XᵀD1`.
    pub(crate) z: Mat,
}

impl CanonicalPolarBundle {
    pub fn trace_m(&self) -> f64 {
        self.s.iter().sum()
    }

    /// `A·M1⁻¹` without forming the inverse.
    pub(crate) fn right_solve_m1(&self, a: &Mat) -> Mat {
        let mut aw = a * &self.w;
        for (j, s) in self.s.iter().enumerate() {
            aw.column_mut(j).unscale_mut(*s);
        }
        aw * self.w.transpose()
    }
}

/// Canonical polar decomposition of `XᵀD`. `X` may be any `n × k` matrix
/// with `XᵀD1` of full column rank.
pub fn canonical_polar(x: &Mat, f: &DFactorization) -> Result<CanonicalPolarBundle> {
    let k = x.ncols();
    if x.nrows() != f.d1.nrows() || k != f.p.nrows() {
        return Err(NepvError::DimensionMismatch(format!(
            "X {:?} vs D1 {:?}, P {:?}",
            x.shape(),
            f.d1.shape(),
            f.p.shape()
        )));
    }
    if f.r == 0 {
        return Ok(CanonicalPolarBundle {
            q_o: Mat::zeros(k, k),
            m: Mat::zeros(k, k),
            q1: Mat::zeros(k, 0),
            m1: Mat::zeros(0, 0),
            w: Mat::zeros(0, 0),
            s: Vec::new(),
            z: Mat::zeros(k, 0),
        });
    }
    let z = x.transpose() * &f.d1;
    let svd = svd_econ(&z, f.rank_tol)?;
    let (smax, smin) = (svd.sigma[0], svd.sigma[f.r - 1]);
    if !(smin > f.rank_tol * smax) {
        return Err(NepvError::RankPreservingViolation {
            sigma_min: smin,
            sigma_max: smax,
        });
    }
    let q1 = &svd.u * svd.v.transpose();
    let mut vs = svd.v.clone();
    for (j, s) in svd.sigma.iter().enumerate() {
        vs.column_mut(j).scale_mut(*s);
    }
    let m1 = symmetrize(&(vs * svd.v.transpose()));
    let q_o = &q1 * f.p.transpose();
    let m = symmetrize(&(&f.p * &m1 * f.p.transpose()));
    Ok(CanonicalPolarBundle {
        q_o,
        m,
        q1,
        m1,
        w: svd.v,
        s: svd.sigma,
        z,
    })
}

/// Directional derivatives of the canonical polar factors.
#[derive(Debug, Clone)]
pub struct PolarDerivative {
    pub dm: Mat,
    pub dqo: Mat,
    /// Solution of `M1·L + L·M1 = D1ᵀ(XEᵀ + EXᵀ)D1`.
    pub l: Mat,
}

/// `DM(X)[E] = P·L·Pᵀ` and `DQ_o(X)[E] = (EᵀD1 − Q1·L)·M1⁻¹·Pᵀ`.
pub fn d_canonical_polar(
    e: &Mat,
    f: &DFactorization,
    bundle: &CanonicalPolarBundle,
) -> Result<PolarDerivative> {
    let k = bundle.q_o.nrows();
    if e.shape() != (f.d1.nrows(), k) {
        return Err(NepvError::DimensionMismatch(format!("E {:?}", e.shape())));
    }
    if f.r == 0 {
        return Ok(PolarDerivative {
            dm: Mat::zeros(k, k),
            dqo: Mat::zeros(k, k),
            l: Mat::zeros(0, 0),
        });
    }
    let y = e.transpose() * &f.d1;
    let zty = bundle.z.transpose() * &y;
    let c = &zty + zty.transpose();
    let l = lyapunov_from_eig(&bundle.w, &bundle.s, &c);
    let dm = &f.p * &l * f.p.transpose();
    let dqo = bundle.right_solve_m1(&(y - &bundle.q1 * &l)) * f.p.transpose();
    Ok(PolarDerivative { dm, dqo, l })
}

/// Derivatives of the polar factors of a full column rank `Z = Q·M` in the
/// direction `Y`.
#[derive(Debug, Clone)]
pub struct FullPolarDerivative {
    pub dm: Mat,
    pub dq: Mat,
}

pub fn d_polar_full(z: &Mat, y: &Mat) -> Result<FullPolarDerivative> {
    if z.shape() != y.shape() || z.ncols() > z.nrows() {
        return Err(NepvError::DimensionMismatch(format!(
            "Z {:?}, Y {:?}",
            z.shape(),
            y.shape()
        )));
    }
    let p = z.ncols();
    let svd = svd_econ(z, DEFAULT_RANK_TOL)?;
    if svd.numerical_rank < p || svd.sigma.first().copied().unwrap_or(0.0) == 0.0 {
        return Err(NepvError::NotPositiveDefinite(format!(
            "Z has numerical rank {} < {p}",
            svd.numerical_rank
        )));
    }
    let q = &svd.u * svd.v.transpose();
    let zty = z.transpose() * y;
    let l = lyapunov_from_eig(&svd.v, &svd.sigma, &(&zty + zty.transpose()));
    let mut resid_w = (y - &q * &l) * &svd.v;
    for (j, s) in svd.sigma.iter().enumerate() {
        resid_w.column_mut(j).unscale_mut(*s);
    }
    Ok(FullPolarDerivative {
        dq: resid_w * svd.v.transpose(),
        dm: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn point(x: Mat) -> StiefelPoint {
        StiefelPoint::orthonormalized(x).unwrap()
    }

    #[test]
    fn factor_d_ranks() {
        let d = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = factor_d(&d, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.r, 2);
        assert!((&f.d1 * f.p.transpose() - &d).norm() < 1e-14);
        let u = DVector::from_vec(alloc::vec![1.0, 2.0, 3.0]);
        let v = DVector::from_vec(alloc::vec![1.0, -1.0]);
        let f = factor_d(&(u * v.transpose()), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(f.r, 1);
        assert_eq!(factor_d(&Mat::zeros(3, 2), DEFAULT_RANK_TOL).unwrap().r, 0);
    }

    #[test]
    fn align_sign_flip() {
        let x = point(Mat::from_column_slice(2, 1, &[1.0, 0.0]));
        let d = Mat::from_column_slice(2, 1, &[-5.0, 0.0]);
        let a = align(&x, &d).unwrap();
        assert!((a.aligned_x.as_mat()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn align_diagonal() {
        let x = point(Mat::identity(2, 2));
        let d = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        let a = align(&x, &d).unwrap();
        assert!((&a.q - Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).norm() < 1e-14);
        let xd = a.aligned_x.as_mat().transpose() * &d;
        assert!((xd - Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])).norm() < 1e-14);
    }

    #[test]
    fn align_zero_product_is_identity() {
        let x = point(Mat::from_column_slice(2, 1, &[1.0, 0.0]));
        let d = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let a = align(&x, &d).unwrap();
        assert_eq!(a.ell, 0);
        assert_eq!(a.q, Mat::identity(1, 1));
    }

    #[test]
    fn regularity_flags() {
        let x = point(Mat::identity(2, 2));
        let d = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = regularity_check(&x, &d, &RegularityTols::default()).unwrap();
        assert!(!r.definite);
        assert!(r.rank_preserving);
        // X orthogonal to the second column of a full-rank D
        let x = point(Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        let d = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = regularity_check(&x, &d, &RegularityTols::default()).unwrap();
        assert!(!r.rank_preserving);
        assert_eq!((r.ell, r.r), (1, 2));
    }

    #[test]
    fn canonical_polar_already_canonical() {
        let x = Mat::identity(2, 2);
        let d = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let f = factor_d(&d, DEFAULT_RANK_TOL).unwrap();
        let b = canonical_polar(&x, &f).unwrap();
        assert!((&b.q_o - Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
        assert!((&b.m - Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn canonical_polar_full_rank_matches_orthogonal_polar() {
        let x = Mat::identity(2, 2);
        let d = Mat::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let f = factor_d(&d, DEFAULT_RANK_TOL).unwrap();
        let b = canonical_polar(&x, &f).unwrap();
        let s = svd_econ(&d, DEFAULT_RANK_TOL).unwrap();
        assert!((&b.q_o - &s.u * s.v.transpose()).norm() < 1e-12);
        assert!((&b.q_o * &b.m - &d).norm() < 1e-12);
        assert!((b.trace_m() - s.sigma.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn rank_breaking_x_is_rejected() {
        let x = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let d = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = factor_d(&d, DEFAULT_RANK_TOL).unwrap();
        assert!(matches!(
            canonical_polar(&x, &f),
            Err(NepvError::RankPreservingViolation { .. })
        ));
    }

    #[test]
    fn polar_derivative_zero_direction() {
        let x = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let d = Mat::from_row_slice(3, 2, &[1.0, 0.3, 0.2, 1.0, 0.5, 0.1]);
        let f = factor_d(&d, DEFAULT_RANK_TOL).unwrap();
        let b = canonical_polar(&x, &f).unwrap();
        let pd = d_canonical_polar(&Mat::zeros(3, 2), &f, &b).unwrap();
        assert_eq!(pd.dm.norm(), 0.0);
        assert_eq!(pd.dqo.norm(), 0.0);
    }

    #[test]
    fn full_polar_at_identity() {
        let i = Mat::identity(3, 3);
        let sym = Mat::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, 3.0]);
        let r = d_polar_full(&i, &sym).unwrap();
        assert!((&r.dm - &sym).norm() < 1e-14);
        assert!(r.dq.norm() < 1e-14);
        let skew = Mat::from_row_slice(3, 3, &[0.0, 2.0, -1.0, -2.0, 0.0, 0.5, 1.0, -0.5, 0.0]);
        let r = d_polar_full(&i, &skew).unwrap();
        assert!(r.dm.norm() < 1e-14);
        assert!((&r.dq - &skew).norm() < 1e-14);
        assert!(d_polar_full(&Mat::zeros(3, 2), &Mat::zeros(3, 2)).is_err());
    }
}
