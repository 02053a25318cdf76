//! NEPv problem records: the coefficient functions φ, ψ, their gradient
//! matrices H_φ, H_ψ and directional derivatives, the matrix D, and the
//! assembled coefficient matrix H(X).

use alloc::format;
use alloc::sync::Arc;
use core::fmt;
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;

use nalgebra::Cholesky;

use crate::alignment::{factor_d, DFactorization};
use crate::error::{NepvError, Result};
use crate::linalg::{
    asymmetry, one_norm, orthonormality_drift, polar_orthonormalize, trace_product, Mat,
    DEFAULT_ORTH_TOL, DEFAULT_RANK_TOL,
};

/// An `n × k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(Mat);

impl StiefelPoint {
    /// Checks `‖XᵀX − I‖_F ≤ 1e−10`.
    pub fn new(x: Mat) -> Result<Self> {
        Self::with_tol(x, DEFAULT_ORTH_TOL)
    }

    pub fn with_tol(x: Mat, tol: f64) -> Result<Self> {
        if x.ncols() == 0 || x.ncols() > x.nrows() {
            return Err(NepvError::InvalidArgument(format!(
                "a Stiefel point needs 1 <= k <= n, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let drift = orthonormality_drift(&x);
        if !(drift <= tol) {
            return Err(NepvError::NotOrthonormal { drift });
        }
        Ok(Self(x))
    }

    /// Replaces `x` by its orthonormal polar factor when the drift exceeds
    /// the tolerance.
    pub fn orthonormalized(x: Mat) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NepvError::InvalidArgument("non-finite entries".into()));
        }
        if x.ncols() > 0 && orthonormality_drift(&x) > DEFAULT_ORTH_TOL {
            let rank = crate::linalg::svd_econ(&x, DEFAULT_RANK_TOL)?.numerical_rank;
            if rank < x.ncols() {
                return Err(NepvError::InvalidArgument(
                    "columns are linearly dependent".into(),
                ));
            }
            return Self::new(polar_orthonormalize(&x));
        }
        Self::new(x)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    /// `X·Q` for an orthogonal `Q`, without re-checking orthonormality.
    pub(crate) fn rotate(&self, q: &Mat) -> Self {
        Self(&self.0 * q)
    }
}

impl AsRef<Mat> for StiefelPoint {
    fn as_ref(&self) -> &Mat {
        &self.0
    }
}

/// The scalar functions of an NEPv and their matrix-valued gradients.
///
/// Implementations must be unitarily invariant (`φ(XQ) = φ(X)`) and satisfy
/// `∂φ/∂X = H_φ(X)·X`, `∂ψ/∂X = H_ψ(X)·X`. All methods accept any
/// full-rank `X`, not just orthonormal ones, so finite differences can
/// step off the manifold.
pub trait CoefficientFunctions: Send + Sync + fmt::Debug {
    fn phi(&self, x: &Mat) -> f64;
    fn psi(&self, x: &Mat) -> f64;
    fn h_phi(&self, x: &Mat) -> Mat;
    fn h_psi(&self, x: &Mat) -> Mat;

    /// `DH_φ(X)[E]`, `None` when the problem does not provide it.
    fn dh_phi(&self, _x: &Mat, _e: &Mat) -> Option<Mat> {
        None
    }

    /// `DH_ψ(X)[E]`, `None` when the problem does not provide it.
    fn dh_psi(&self, _x: &Mat, _e: &Mat) -> Option<Mat> {
        None
    }

    /// `Dψ(X)[E] = tr(Xᵀ H_ψ(X) E)`.
    fn dpsi(&self, x: &Mat, e: &Mat) -> f64 {
        trace_product(x, &(self.h_psi(x) * e))
    }
}

fn quad(x: &Mat, s: &Mat) -> f64 {
    trace_product(x, &(s * x))
}

/// `f = (1−α)·tr(XᵀAX)/tr(XᵀBX) + α/√tr(XᵀBX) · tr(XᵀD)`.
#[derive(Debug, Clone)]
pub struct AlphaFamily {
    pub a: Mat,
    pub b: Mat,
    pub alpha: f64,
}

impl CoefficientFunctions for AlphaFamily {
    fn phi(&self, x: &Mat) -> f64 {
        (1.0 - self.alpha) * quad(x, &self.a) / quad(x, &self.b)
    }

    fn psi(&self, x: &Mat) -> f64 {
        self.alpha / quad(x, &self.b).sqrt()
    }

    fn h_phi(&self, x: &Mat) -> Mat {
        let b = quad(x, &self.b);
        (&self.a * (1.0 - self.alpha) - &self.b * self.phi(x)) * (2.0 / b)
    }

    fn h_psi(&self, x: &Mat) -> Mat {
        &self.b * (-self.psi(x) / quad(x, &self.b))
    }

    fn dh_phi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        let b = quad(x, &self.b);
        let h = self.h_phi(x);
        let tbe = trace_product(x, &(&self.b * e));
        let the = trace_product(x, &(&h * e));
        Some(h * (-2.0 * tbe / b) - &self.b * (2.0 * the / b))
    }

    fn dh_psi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        let b = quad(x, &self.b);
        let the = trace_product(x, &(self.h_psi(x) * e));
        Some(&self.b * (-3.0 * the / b))
    }
}

/// `f = tr(XᵀAX)/tr(XᵀBX)^θ + tr(XᵀD)/tr(XᵀBX)^θ`.
#[derive(Debug, Clone)]
pub struct ThetaFamily {
    pub a: Mat,
    pub b: Mat,
    pub theta: f64,
}

impl ThetaFamily {
    fn h_phi_at(&self, x: &Mat, theta: f64) -> Mat {
        let b = quad(x, &self.b);
        let ratio = quad(x, &self.a) / b;
        (&self.a - &self.b * (theta * ratio)) * (2.0 * self.psi(x))
    }
}

impl CoefficientFunctions for ThetaFamily {
    fn phi(&self, x: &Mat) -> f64 {
        quad(x, &self.a) * self.psi(x)
    }

    fn psi(&self, x: &Mat) -> f64 {
        quad(x, &self.b).powf(-self.theta)
    }

    fn h_phi(&self, x: &Mat) -> Mat {
        self.h_phi_at(x, self.theta)
    }

    fn h_psi(&self, x: &Mat) -> Mat {
        &self.b * (-2.0 * self.theta * self.psi(x) / quad(x, &self.b))
    }

    fn dh_phi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        let b = quad(x, &self.b);
        let t = self.theta;
        let tbe = trace_product(x, &(&self.b * e));
        let the = trace_product(x, &(self.h_phi(x) * e));
        Some(self.h_phi_at(x, 1.0) * (-2.0 * t * tbe / b) - &self.b * (2.0 * t * the / b))
    }

    fn dh_psi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        let b = quad(x, &self.b);
        let the = trace_product(x, &(self.h_psi(x) * e));
        Some(&self.b * (-2.0 * (self.theta + 1.0) * the / b))
    }
}

/// `f = tr(XᵀAX) + c·tr(XᵀD)`: constant `H_φ = 2A`, constant `ψ = c`.
#[derive(Debug, Clone)]
pub struct QuadraticFamily {
    pub a: Mat,
    pub weight: f64,
}

impl CoefficientFunctions for QuadraticFamily {
    fn phi(&self, x: &Mat) -> f64 {
        quad(x, &self.a)
    }

    fn psi(&self, _x: &Mat) -> f64 {
        self.weight
    }

    fn h_phi(&self, _x: &Mat) -> Mat {
        &self.a * 2.0
    }

    fn h_psi(&self, _x: &Mat) -> Mat {
        Mat::zeros(self.a.nrows(), self.a.ncols())
    }

    fn dh_phi(&self, _x: &Mat, _e: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.a.nrows(), self.a.ncols()))
    }

    fn dh_psi(&self, _x: &Mat, _e: &Mat) -> Option<Mat> {
        Some(Mat::zeros(self.a.nrows(), self.a.ncols()))
    }

    fn dpsi(&self, _x: &Mat, _e: &Mat) -> f64 {
        0.0
    }
}

/// Which named family a problem was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyTag {
    Alpha { alpha: f64 },
    Theta { theta: f64 },
    Quadratic { weight: f64 },
    Custom,
}

/// An NEPv `H(X)X = XΛ` with
/// `H(X) = H_φ(X) + tr(XᵀD)·H_ψ(X) + ψ(X)·(DXᵀ + XDᵀ)`.
#[derive(Clone)]
pub struct NepvProblem {
    d: Mat,
    funcs: Arc<dyn CoefficientFunctions>,
    family: FamilyTag,
    dfact: DFactorization,
}

impl fmt::Debug for NepvProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NepvProblem")
            .field("n", &self.n())
            .field("k", &self.k())
            .field("rank_d", &self.dfact.r)
            .field("family", &self.family)
            .finish()
    }
}

impl NepvProblem {
    pub fn new(d: Mat, funcs: Arc<dyn CoefficientFunctions>, family: FamilyTag) -> Result<Self> {
        if d.ncols() == 0 || d.ncols() > d.nrows() {
            return Err(NepvError::InvalidArgument(format!(
                "D must be n x k with 1 <= k <= n, got {:?}",
                d.shape()
            )));
        }
        let dfact = factor_d(&d, DEFAULT_RANK_TOL)?;
        Ok(Self {
            d,
            funcs,
            family,
            dfact,
        })
    }

    /// Same problem with different coefficient functions (e.g. a wrapped
    /// or perturbed callback set).
    pub fn with_functions(&self, funcs: Arc<dyn CoefficientFunctions>) -> Self {
        Self {
            funcs,
            family: FamilyTag::Custom,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn k(&self) -> usize {
        self.d.ncols()
    }

    pub fn d(&self) -> &Mat {
        &self.d
    }

    pub fn funcs(&self) -> &dyn CoefficientFunctions {
        &*self.funcs
    }

    /// Shared handle to the coefficient functions, for wrapping.
    pub fn shared_funcs(&self) -> Arc<dyn CoefficientFunctions> {
        Arc::clone(&self.funcs)
    }

    pub fn family(&self) -> FamilyTag {
        self.family
    }

    pub fn d_factorization(&self) -> &DFactorization {
        &self.dfact
    }

    pub(crate) fn check_shape(&self, x: &Mat) -> Result<()> {
        if x.shape() != self.d.shape() {
            return Err(NepvError::DimensionMismatch(format!(
                "X is {}x{}, D is {}x{}",
                x.nrows(),
                x.ncols(),
                self.n(),
                self.k()
            )));
        }
        Ok(())
    }

    /// ψ(X), rejecting negative values.
    pub(crate) fn checked_psi(&self, x: &Mat) -> Result<f64> {
        let psi = self.funcs.psi(x);
        if !(psi >= 0.0) {
            return Err(NepvError::NonPositivePsi { value: psi });
        }
        Ok(psi)
    }

    /// `f(X) = φ(X) + ψ(X)·tr(XᵀD)`.
    pub fn objective(&self, x: &StiefelPoint) -> Result<f64> {
        let x = x.as_mat();
        self.check_shape(x)?;
        let psi = self.checked_psi(x)?;
        Ok(self.funcs.phi(x) + psi * trace_product(x, &self.d))
    }

    /// Assembles `H(X)`.
    pub fn build_h(&self, x: &StiefelPoint) -> Result<Mat> {
        let x = x.as_mat();
        self.check_shape(x)?;
        let psi = self.checked_psi(x)?;
        let mut h = self.funcs.h_phi(x);
        let t = trace_product(x, &self.d);
        if t != 0.0 {
            h += self.funcs.h_psi(x) * t;
        }
        if psi != 0.0 {
            let dx = &self.d * x.transpose();
            h += (&dx + dx.transpose()) * psi;
        }
        Ok(h)
    }

    /// `‖H(X)X − X(XᵀH(X)X)‖₁ / ‖H(X)‖₁`.
    pub fn nres(&self, x: &StiefelPoint) -> Result<f64> {
        let h = self.build_h(x)?;
        nres_of(&h, x.as_mat())
    }
}

/// Normalized residual of `X` against a fixed symmetric `H`, in the 1-norm.
pub fn nres_of(h: &Mat, x: &Mat) -> Result<f64> {
    let denom = one_norm(h);
    if denom == 0.0 {
        return Err(NepvError::DegenerateProblem);
    }
    let hx = h * x;
    let r = &hx - x * (x.transpose() * &hx);
    Ok(one_norm(&r) / denom)
}

fn check_pair(a: &Mat, b: &Mat, d: &Mat) -> Result<()> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.shape() != (n, n) || d.nrows() != n {
        return Err(NepvError::DimensionMismatch(format!(
            "A {:?}, B {:?}, D {:?}",
            a.shape(),
            b.shape(),
            d.shape()
        )));
    }
    for (name, m) in [("A", a), ("B", b)] {
        let asym = asymmetry(m);
        if asym > crate::linalg::DEFAULT_SYM_TOL {
            let _ = name;
            return Err(NepvError::NotSymmetric { asymmetry: asym });
        }
    }
    if Cholesky::new(b.clone()).is_none() {
        return Err(NepvError::NotPositiveDefinite(
            "B has no Cholesky factorization".into(),
        ));
    }
    Ok(())
}

/// The α-family. Values of α outside `[0, 1]` are accepted.
pub fn make_alpha_problem(a: &Mat, b: &Mat, d: &Mat, alpha: f64) -> Result<NepvProblem> {
    check_pair(a, b, d)?;
    let funcs = AlphaFamily {
        a: a.clone(),
        b: b.clone(),
        alpha,
    };
    NepvProblem::new(d.clone(), Arc::new(funcs), FamilyTag::Alpha { alpha })
}

/// The θ-family.
pub fn make_theta_problem(a: &Mat, b: &Mat, d: &Mat, theta: f64) -> Result<NepvProblem> {
    check_pair(a, b, d)?;
    let funcs = ThetaFamily {
        a: a.clone(),
        b: b.clone(),
        theta,
    };
    NepvProblem::new(d.clone(), Arc::new(funcs), FamilyTag::Theta { theta })
}

/// `f = tr(XᵀAX) + weight·tr(XᵀD)`, whose `H = 2A + weight·(DXᵀ + XDᵀ)`.
pub fn make_quadratic_problem(a: &Mat, d: &Mat, weight: f64) -> Result<NepvProblem> {
    let n = a.nrows();
    if a.shape() != (n, n) || d.nrows() != n {
        return Err(NepvError::DimensionMismatch(format!(
            "A {:?}, D {:?}",
            a.shape(),
            d.shape()
        )));
    }
    let asym = asymmetry(a);
    if asym > crate::linalg::DEFAULT_SYM_TOL {
        return Err(NepvError::NotSymmetric { asymmetry: asym });
    }
    let funcs = QuadraticFamily {
        a: a.clone(),
        weight,
    };
    NepvProblem::new(d.clone(), Arc::new(funcs), FamilyTag::Quadratic { weight })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn e1(n: usize) -> StiefelPoint {
        let mut x = Mat::zeros(n, 1);
        x[0] = 1.0;
        StiefelPoint::new(x).unwrap()
    }

    #[test]
    fn alpha_zero_is_trace_ratio() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, 0.0).unwrap();
        let x =
            StiefelPoint::orthonormalized(Mat::from_column_slice(3, 1, &[0.3, -1.0, 0.2])).unwrap();
        let xm = x.as_mat();
        let expect = (xm.transpose() * &a * xm)[0] / (xm.transpose() * &b * xm)[0];
        assert!((p.objective(&x).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn alpha_objective_at_e1() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, 0.5).unwrap();
        // 0.5*(-3.242/0.592) + 0.5/sqrt(0.592)*(-9.122)
        let expect = 0.5 * (-3.242 / 0.592) + 0.5 / 0.592_f64.sqrt() * -9.122;
        assert!((p.objective(&e1(3)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn theta_zero_is_unbalanced_procrustes() {
        let (a, b, d) = presets::example5();
        let p = make_theta_problem(&a, &b, &d, 0.0).unwrap();
        let x = StiefelPoint::orthonormalized(Mat::from_row_slice(
            3,
            2,
            &[1.0, 0.2, -0.5, 1.0, 0.3, 0.4],
        ))
        .unwrap();
        let xm = x.as_mat();
        let h = p.build_h(&x).unwrap();
        let expect = &a * 2.0 + &d * xm.transpose() + xm * d.transpose();
        assert!((h - expect).norm() < 1e-12);
        let f = (xm.transpose() * &a * xm).trace() + (xm.transpose() * &d).trace();
        assert!((p.objective(&x).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn assembly_matches_closed_forms() {
        let (a, b, d) = presets::example2();
        let x = StiefelPoint::orthonormalized(Mat::from_row_slice(
            3,
            2,
            &[0.4, 0.1, -0.2, 0.9, 0.7, -0.3],
        ))
        .unwrap();
        let xm = x.as_mat();
        let tb = (xm.transpose() * &b * xm).trace();
        let ta = (xm.transpose() * &a * xm).trace();
        let td = (xm.transpose() * &d).trace();
        let dx = &d * xm.transpose() + xm * d.transpose();

        let alpha = 0.37;
        let phi = (1.0 - alpha) * ta / tb;
        let psi = alpha / tb.sqrt();
        let closed =
            (&a * (1.0 - alpha) - &b * phi) * (2.0 / tb) - &b * (td * psi / tb) + &dx * psi;
        let h = make_alpha_problem(&a, &b, &d, alpha)
            .unwrap()
            .build_h(&x)
            .unwrap();
        assert!((h - closed).norm() < 1e-12);

        let theta = 0.8;
        let psi = tb.powf(-theta);
        let closed = (&a - &b * (theta * ta / tb)) * (2.0 * psi)
            - &b * (2.0 * theta * td * psi / tb)
            + &dx * psi;
        let h = make_theta_problem(&a, &b, &d, theta)
            .unwrap()
            .build_h(&x)
            .unwrap();
        assert!((h - closed).norm() < 1e-12);
    }

    #[test]
    fn zero_d_is_unitarily_invariant() {
        let (a, b, _) = presets::example5();
        let p = make_theta_problem(&a, &b, &Mat::zeros(3, 2), 0.7).unwrap();
        let x = StiefelPoint::orthonormalized(Mat::from_row_slice(
            3,
            2,
            &[1.0, 0.2, -0.5, 1.0, 0.3, 0.4],
        ))
        .unwrap();
        let (c, s) = (0.9_f64.cos(), 0.9_f64.sin());
        let q = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        let h = p.build_h(&x).unwrap();
        assert!((&h - p.funcs().h_phi(x.as_mat())).norm() < 1e-14);
        assert!((h - p.build_h(&x.rotate(&q)).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn nres_of_exact_eigenbasis_and_scaling() {
        let h = Mat::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![3.0, 1.0, 2.0]));
        let x = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(nres_of(&h, &x).unwrap() < 1e-15);
        let y = Mat::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let r = nres_of(&h, &y).unwrap();
        assert!(r > 0.0);
        assert!((nres_of(&(&h * 7.5), &y).unwrap() - r).abs() < 1e-15);
        assert!(matches!(
            nres_of(&Mat::zeros(3, 3), &y),
            Err(NepvError::DegenerateProblem)
        ));
    }

    #[test]
    fn indefinite_b_is_rejected() {
        let (a, _, d) = presets::example1();
        let b = Mat::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![1.0, -1.0, 1.0]));
        assert!(matches!(
            make_alpha_problem(&a, &b, &d, 0.5),
            Err(NepvError::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            make_theta_problem(&a, &b, &d, 0.5),
            Err(NepvError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn negative_psi_is_rejected() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, -0.2).unwrap();
        assert!(matches!(
            p.objective(&e1(3)),
            Err(NepvError::NonPositivePsi { .. })
        ));
    }

    #[test]
    fn stiefel_constructors() {
        assert!(matches!(
            StiefelPoint::new(Mat::from_column_slice(2, 1, &[1.0, 1.0])),
            Err(NepvError::NotOrthonormal { .. })
        ));
        let x = StiefelPoint::orthonormalized(Mat::from_column_slice(2, 1, &[3.0, 4.0])).unwrap();
        assert!((x.as_mat()[0] - 0.6).abs() < 1e-15);
        assert!(
            StiefelPoint::orthonormalized(Mat::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]))
                .is_err()
        );
    }
}
