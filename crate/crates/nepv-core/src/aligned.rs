//! The aligned coefficient matrix
//! `G(X) = H_φ(X) + tr(M)·H_ψ(X) + ψ(X)·(D·Q_oᵀ·Xᵀ + X·Q_o·Dᵀ)`,
//! its derivative `DG(X)[E]` and the aligned objective.

use crate::alignment::{canonical_polar, d_canonical_polar, CanonicalPolarBundle};
use crate::error::{NepvError, Result};
use crate::linalg::{svd_econ, trace_product, Mat, DEFAULT_RANK_TOL};
use crate::problem::{NepvProblem, StiefelPoint};

#[derive(Debug, Clone)]
pub struct AlignedEvaluation {
    pub g: Mat,
    pub bundle: CanonicalPolarBundle,
    pub psi_val: f64,
    pub phi_val: f64,
    pub tr_m: f64,
}

/// Everything at a fixed `X` needed to apply `DG(X)` repeatedly.
#[derive(Debug, Clone)]
pub struct AlignedPoint<'p> {
    problem: &'p NepvProblem,
    x: Mat,
    eval: AlignedEvaluation,
    h_psi: Mat,
    /// `D·Q_oᵀ`.
    dq: Mat,
    /// `D·Q_oᵀ·Xᵀ + X·Q_o·Dᵀ`.
    cross: Mat,
}

fn sym_outer(a: &Mat, b: &Mat) -> Mat {
    // a·bᵀ + b·aᵀ
    let ab = a * b.transpose();
    &ab + ab.transpose()
}

impl<'p> AlignedPoint<'p> {
    /// `X` may be any `n × k` matrix in the rank-preserving domain; it need
    /// not be orthonormal.
    pub fn new(problem: &'p NepvProblem, x: &Mat) -> Result<Self> {
        problem.check_shape(x)?;
        let f = problem.funcs();
        let psi_val = problem.checked_psi(x)?;
        let bundle = canonical_polar(x, problem.d_factorization())?;
        let tr_m = bundle.trace_m();
        let h_psi = f.h_psi(x);
        let dq = problem.d() * bundle.q_o.transpose();
        let cross = sym_outer(&dq, x);
        let mut g = f.h_phi(x);
        if tr_m != 0.0 {
            g += &h_psi * tr_m;
        }
        if psi_val != 0.0 {
            g += &cross * psi_val;
        }
        let eval = AlignedEvaluation {
            g,
            bundle,
            psi_val,
            phi_val: f.phi(x),
            tr_m,
        };
        Ok(Self {
            problem,
            x: x.clone(),
            eval,
            h_psi,
            dq,
            cross,
        })
    }

    pub fn evaluation(&self) -> &AlignedEvaluation {
        &self.eval
    }

    pub fn into_evaluation(self) -> AlignedEvaluation {
        self.eval
    }

    pub fn g(&self) -> &Mat {
        &self.eval.g
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    /// `DG(X)[E]`, the sum of six symmetric terms.
    pub fn dg(&self, e: &Mat) -> Result<Mat> {
        self.problem.check_shape(e)?;
        let f = self.problem.funcs();
        let x = &self.x;
        let dh_phi = f
            .dh_phi(x, e)
            .ok_or(NepvError::MissingDerivative("dh_phi"))?;
        let dh_psi = f
            .dh_psi(x, e)
            .ok_or(NepvError::MissingDerivative("dh_psi"))?;
        let pd = d_canonical_polar(e, self.problem.d_factorization(), &self.eval.bundle)?;
        let psi = self.eval.psi_val;
        let mut out = dh_phi;
        out += &self.h_psi * pd.dm.trace();
        out += dh_psi * self.eval.tr_m;
        out += &self.cross * f.dpsi(x, e);
        if psi != 0.0 {
            let ddq = self.problem.d() * pd.dqo.transpose();
            out += (sym_outer(&ddq, x) + sym_outer(&self.dq, e)) * psi;
        }
        Ok(out)
    }
}

/// `G(X)` directly from the canonical polar factors.
pub fn g_matrix(p: &NepvProblem, x: &Mat) -> Result<AlignedEvaluation> {
    Ok(AlignedPoint::new(p, x)?.into_evaluation())
}

/// `DG(X)[E]`.
pub fn dg(p: &NepvProblem, x: &Mat, e: &Mat) -> Result<Mat> {
    AlignedPoint::new(p, x)?.dg(e)
}

/// `g(X) = φ(X) + ψ(X)·Σσ_i(XᵀD)`, defined for every orthonormal `X`.
pub fn aligned_objective(p: &NepvProblem, x: &StiefelPoint) -> Result<f64> {
    let xm = x.as_mat();
    p.check_shape(xm)?;
    let psi = p.checked_psi(xm)?;
    let nuclear: f64 = svd_econ(&(xm.transpose() * p.d()), DEFAULT_RANK_TOL)?
        .sigma
        .iter()
        .sum();
    Ok(p.funcs().phi(xm) + psi * nuclear)
}

/// `tr(Q_o·Dᵀ·E)`, the trace of `DM(X)[E]`.
pub fn trace_dm_identity(bundle: &CanonicalPolarBundle, d: &Mat, e: &Mat) -> f64 {
    trace_product(&(d * bundle.q_o.transpose()), e)
}
