//! `check`: finite-difference validation plus the invariant suites on one
//! problem instance.

use std::fmt;

use anyhow::Result;
use nalgebra::DVector;
use nepv_core::aligned::{g_matrix, trace_dm_identity};
use nepv_core::alignment::{
    align, canonical_polar, d_canonical_polar, regularity_check, RegularityTols,
};
use nepv_core::fdcheck::{fd_validate, FdOptions};
use nepv_core::linalg::{orthonormality_drift, solve_lyapunov_spd, Mat};
use nepv_core::presets;
use nepv_core::scf::scf_step;
use nepv_core::StiefelPoint;
use serde_json::{json, Value};

use crate::output::json_f64;
use crate::setup::Experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::NotApplicable => "n/a",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub value: Option<f64>,
    pub threshold: f64,
    pub status: Status,
}

impl CheckLine {
    fn new(name: &'static str, value: Option<f64>, threshold: f64) -> Self {
        let status = match value {
            None => Status::NotApplicable,
            Some(v) if v <= threshold => Status::Pass,
            Some(_) => Status::Fail,
        };
        Self {
            name,
            value,
            threshold,
            status,
        }
    }
}

const POINTS: u64 = 3;

fn random_point(n: usize, k: usize, seed: u64) -> Result<StiefelPoint> {
    Ok(StiefelPoint::orthonormalized(presets::random_gaussian(
        n, k, seed,
    ))?)
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn check(exp: &Experiment) -> Result<Vec<CheckLine>> {
    let param = exp.param().unwrap_or(1.0);
    let p = exp.problem(param)?;
    let (n, k) = (exp.n(), exp.k());
    let seed = exp.cfg.seed;
    let has_d = p.d_factorization().r > 0;

    let mut fd: Vec<Option<f64>> = vec![Some(0.0); 7];
    let (mut inv, mut gh, mut definite, mut lyap, mut trace_id) =
        (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..POINTS {
        let x = random_point(n, k, seed.wrapping_add(1000 + i))?;
        let r = fd_validate(
            &p,
            &x,
            &FdOptions {
                seed: seed.wrapping_add(i),
                ..Default::default()
            },
        )?;
        for (slot, (_, v)) in fd.iter_mut().zip(r.entries()) {
            *slot = match v {
                None => None,
                Some(v) => slot.map(|s| s.max(v)),
            };
        }

        // Unitary invariance of G.
        let g0 = g_matrix(&p, x.as_mat())?.g;
        for s in 0..20u64 {
            let q = presets::random_gaussian(k, k, seed.wrapping_add(7919 * (i + 1) + s))
                .qr()
                .q();
            let g = g_matrix(&p, &(x.as_mat() * q))?.g;
            inv = inv.max((g - &g0).norm() / g0.norm().max(f64::MIN_POSITIVE));
        }

        // G = H at the aligned basis, and the aligned basis is definite.
        let xa = align(&x, p.d())?.aligned_x;
        let h = p.build_h(&xa)?;
        let ga = g_matrix(&p, xa.as_mat())?.g;
        gh = gh.max((ga - &h).norm() / h.norm().max(f64::MIN_POSITIVE));
        if has_d {
            let reg = regularity_check(&xa, p.d(), &RegularityTols::default())?;
            let scale = (xa.as_mat().transpose() * p.d()).norm();
            definite = definite.max((-reg.min_eig / scale).max(0.0));

            // Lyapunov solve against the Kronecker oracle, on M1 of X.
            let bundle = canonical_polar(x.as_mat(), p.d_factorization())?;
            let m1 = &bundle.m1;
            let r = m1.nrows();
            let c = {
                let g = presets::random_gaussian(r, r, seed.wrapping_add(31 + i));
                &g + g.transpose()
            };
            let l = solve_lyapunov_spd(m1, &c)?;
            let id = Mat::identity(r, r);
            let big = kron(&id, m1) + kron(&m1.transpose(), &id);
            if let Some(v) = big.lu().solve(&DVector::from_column_slice(c.as_slice())) {
                let oracle = Mat::from_column_slice(r, r, v.as_slice());
                lyap = lyap.max((l - &oracle).norm() / oracle.norm().max(1.0));
            }

            // tr(DM[E]) = tr(Q_o Dᵀ E).
            let e = presets::random_gaussian(n, k, seed.wrapping_add(77 + i));
            let pd = d_canonical_polar(&e, p.d_factorization(), &bundle)?;
            let t = trace_dm_identity(&bundle, p.d(), &e);
            trace_id = trace_id.max((pd.dm.trace() - t).abs() / t.abs().max(1.0));
        }
    }

    // Orthonormality along 100 SCF steps.
    let mut x = random_point(n, k, seed.wrapping_add(4242))?;
    let mut drift = orthonormality_drift(x.as_mat());
    for _ in 0..100 {
        x = scf_step(&p, &x, exp.cfg.sigma.unwrap_or(0.0))?.next;
        drift = drift.max(orthonormality_drift(x.as_mat()));
    }

    let tol = exp.cfg.fd_tol;
    let polar = |v: f64| has_d.then_some(v);
    let names = [
        "fd grad_phi",
        "fd grad_psi",
        "fd DH_phi",
        "fd DH_psi",
        "fd DM",
        "fd DQ_o",
        "fd DG",
    ];
    let mut lines: Vec<CheckLine> = names
        .iter()
        .zip(&fd)
        .map(|(n, v)| CheckLine::new(n, *v, tol))
        .collect();
    lines.extend([
        CheckLine::new("G unitary invariance", Some(inv), 1e-10),
        CheckLine::new("G = H at aligned basis", Some(gh), 1e-10),
        CheckLine::new("aligned XᵀD definite", polar(definite), 1e-12),
        CheckLine::new("Lyapunov vs Kronecker", polar(lyap), 1e-10),
        CheckLine::new("tr DM identity", polar(trace_id), 1e-10),
        CheckLine::new("orthonormality drift (100 SCF steps)", Some(drift), 1e-12),
    ]);
    Ok(lines)
}

pub fn passed(lines: &[CheckLine]) -> bool {
    lines.iter().all(|l| l.status != Status::Fail)
}

pub fn table(lines: &[CheckLine]) -> String {
    let mut s = format!(
        "{:<40} {:>12} {:>10}  status\n",
        "check", "value", "threshold"
    );
    for l in lines {
        let v = l.value.map_or("-".to_string(), |v| format!("{v:.3e}"));
        s += &format!(
            "{:<40} {:>12} {:>10.1e}  {}\n",
            l.name, v, l.threshold, l.status
        );
    }
    s
}

pub fn check_json(lines: &[CheckLine]) -> Value {
    json!({
        "command": "check",
        "passed": passed(lines),
        "checks": lines.iter().map(|l| json!({
            "name": l.name,
            "value": json_f64(l.value),
            "threshold": l.threshold,
            "status": l.status.to_string(),
        })).collect::<Vec<_>>(),
    })
}
