//! Central finite-difference validation of the analytic derivatives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aligned::{g_matrix, AlignedPoint};
use crate::alignment::{canonical_polar, d_canonical_polar};
use crate::error::{NepvError, Result};
use crate::linalg::{trace_product, Mat};
use crate::problem::{NepvProblem, StiefelPoint};

/// Worst relative error per checked quantity; `None` when not applicable
/// (polar factors with `D = 0`) or not provided by the problem.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdReport {
    pub grad_phi: f64,
    pub grad_psi: f64,
    pub dh_phi: Option<f64>,
    pub dh_psi: Option<f64>,
    pub dm: Option<f64>,
    pub dqo: Option<f64>,
    pub dg: Option<f64>,
}

impl FdReport {
    pub fn entries(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("grad_phi", Some(self.grad_phi)),
            ("grad_psi", Some(self.grad_psi)),
            ("dh_phi", self.dh_phi),
            ("dh_psi", self.dh_psi),
            ("dm", self.dm),
            ("dqo", self.dqo),
            ("dg", self.dg),
        ]
    }

    pub fn worst(&self) -> f64 {
        self.entries()
            .iter()
            .filter_map(|e| e.1)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries().iter().all(|e| e.1.is_none_or(|v| v <= tol))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub trials: usize,
    pub seed: u64,
    /// Step multipliers; each is scaled by `max(1, ‖X‖_F)` and the best
    /// step per trial is kept.
    pub steps: [f64; 3],
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0xfd,
            steps: [1e-4, 1e-5, 1e-6],
        }
    }
}

/// `diff / max(reference, floor)`; the floor keeps vanishing derivatives
/// from turning roundoff into large relative errors.
fn rel(diff: f64, reference: f64, floor: f64) -> f64 {
    if diff == 0.0 {
        return 0.0;
    }
    diff / reference.max(floor).max(f64::MIN_POSITIVE)
}

fn central<T, F>(x: &Mat, e: &Mat, h: f64, f: F) -> Result<T>
where
    F: Fn(&Mat) -> Result<T>,
    T: core::ops::Sub<Output = T> + core::ops::Div<f64, Output = T>,
{
    Ok((f(&(x + e * h))? - f(&(x - e * h))?) / (2.0 * h))
}

fn best_over_steps<F: FnMut(f64) -> Result<f64>>(
    steps: &[f64],
    scale: f64,
    mut err: F,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for s in steps {
        best = best.min(err(s * scale)?);
    }
    Ok(best)
}

/// Runs `opts.trials` random unit directions at `x` and records the worst
/// (over trials) of the best (over steps) relative error for each quantity.
pub fn fd_validate(p: &NepvProblem, x: &StiefelPoint, opts: &FdOptions) -> Result<FdReport> {
    let xm = x.as_mat();
    p.check_shape(xm)?;
    let f = p.funcs();
    let (n, k) = xm.shape();
    let scale = xm.norm().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let polar_applicable = p.d_factorization().r > 0;
    let base_point = AlignedPoint::new(p, xm)?;
    let bundle = canonical_polar(xm, p.d_factorization())?;
    let h_phi = f.h_phi(xm);
    let h_psi = f.h_psi(xm);
    let mut out = FdReport {
        dh_phi: Some(0.0),
        dh_psi: Some(0.0),
        dm: polar_applicable.then_some(0.0),
        dqo: polar_applicable.then_some(0.0),
        dg: Some(0.0),
        ..Default::default()
    };
    let worst = |slot: &mut Option<f64>, v: f64| {
        if let Some(s) = slot {
            *s = s.max(v);
        }
    };
    for _ in 0..opts.trials {
        let mut e = Mat::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        e /= e.norm();
        let steps = &opts.steps;

        let g_phi = &h_phi * xm;
        let an = trace_product(&g_phi, &e);
        let err = best_over_steps(steps, scale, |h| {
            let fd = (f.phi(&(xm + &e * h)) - f.phi(&(xm - &e * h))) / (2.0 * h);
            Ok(rel((fd - an).abs(), g_phi.norm(), 1e-12 * f.phi(xm).abs()))
        })?;
        out.grad_phi = out.grad_phi.max(err);

        let g_psi = &h_psi * xm;
        let an = trace_product(&g_psi, &e);
        let err = best_over_steps(steps, scale, |h| {
            let fd = (f.psi(&(xm + &e * h)) - f.psi(&(xm - &e * h))) / (2.0 * h);
            Ok(rel((fd - an).abs(), g_psi.norm(), 1e-12 * f.psi(xm).abs()))
        })?;
        out.grad_psi = out.grad_psi.max(err);

        match f.dh_phi(xm, &e) {
            Some(an) => {
                let err = best_over_steps(steps, scale, |h| {
                    let fd = central(xm, &e, h, |y| Ok(f.h_phi(y)))?;
                    Ok(rel((fd - &an).norm(), an.norm(), 1e-6 * h_phi.norm()))
                })?;
                worst(&mut out.dh_phi, err);
            }
            None => out.dh_phi = None,
        }
        match f.dh_psi(xm, &e) {
            Some(an) => {
                let err = best_over_steps(steps, scale, |h| {
                    let fd = central(xm, &e, h, |y| Ok(f.h_psi(y)))?;
                    Ok(rel((fd - &an).norm(), an.norm(), 1e-6 * h_psi.norm()))
                })?;
                worst(&mut out.dh_psi, err);
            }
            None => out.dh_psi = None,
        }

        if polar_applicable {
            let pd = d_canonical_polar(&e, p.d_factorization(), &bundle)?;
            let err = best_over_steps(steps, scale, |h| {
                let fd = central(
                    xm,
                    &e,
                    h,
                    |y| Ok(canonical_polar(y, p.d_factorization())?.m),
                )?;
                Ok(rel(
                    (fd - &pd.dm).norm(),
                    pd.dm.norm(),
                    1e-6 * bundle.m.norm(),
                ))
            })?;
            worst(&mut out.dm, err);
            let err = best_over_steps(steps, scale, |h| {
                let fd = central(xm, &e, h, |y| {
                    Ok(canonical_polar(y, p.d_factorization())?.q_o)
                })?;
                Ok(rel(
                    (fd - &pd.dqo).norm(),
                    pd.dqo.norm(),
                    1e-6 * bundle.q_o.norm(),
                ))
            })?;
            worst(&mut out.dqo, err);
        }

        match base_point.dg(&e) {
            Ok(an) => {
                let g0 = base_point.g().norm();
                let err = best_over_steps(steps, scale, |h| {
                    let fd = central(xm, &e, h, |y| Ok(g_matrix(p, y)?.g))?;
                    Ok(rel((fd - &an).norm(), an.norm(), 1e-6 * g0))
                })?;
                worst(&mut out.dg, err);
            }
            Err(NepvError::MissingDerivative(_)) => out.dg = None,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::problem::{make_alpha_problem, make_quadratic_problem, make_theta_problem};

    #[test]
    fn constant_h_is_exact() {
        let a = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 0.5]);
        let p = make_quadratic_problem(&a, &Mat::zeros(3, 1), 1.0).unwrap();
        let x =
            StiefelPoint::orthonormalized(Mat::from_column_slice(3, 1, &[1.0, 2.0, -0.5])).unwrap();
        let r = fd_validate(&p, &x, &FdOptions::default()).unwrap();
        assert!(r.worst() <= 1e-10, "{r:?}");
        assert_eq!(r.dm, None);
    }

    #[test]
    fn example_instances_pass() {
        let (a, b, d) = presets::example1();
        let p = make_alpha_problem(&a, &b, &d, 0.5).unwrap();
        let x =
            StiefelPoint::orthonormalized(Mat::from_column_slice(3, 1, &[0.3, -0.8, 0.5])).unwrap();
        let r = fd_validate(&p, &x, &FdOptions::default()).unwrap();
        assert!(r.passes(1e-6), "{r:?}");

        let (a, b, d) = presets::example5();
        let p = make_theta_problem(&a, &b, &d, 3.0).unwrap();
        let x = StiefelPoint::orthonormalized(Mat::from_row_slice(
            3,
            2,
            &[0.4, 0.1, -0.2, 0.9, 0.7, -0.3],
        ))
        .unwrap();
        let r = fd_validate(&p, &x, &FdOptions::default()).unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }
}
