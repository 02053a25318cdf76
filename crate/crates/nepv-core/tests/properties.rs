mod common;

use common::*;
use nalgebra::DVector;
use nepv_core::aligned::g_matrix;
use nepv_core::alignment::{align, canonical_polar, factor_d};
use nepv_core::convergence::{certify, CertifyOptions, RateOperators};
use nepv_core::fdcheck::{fd_validate, FdOptions};
use nepv_core::linalg::{
    orthonormality_drift, solve_lyapunov_spd, spectral_radius, trace_product, Mat, SpectralMethod,
    SpectralOptions,
};
use nepv_core::presets;
use nepv_core::scf::scf_step;
use nepv_core::StiefelPoint;

#[test]
fn fd_checks_on_random_instances() {
    let tol = 1e-6;
    for i in 0..10u64 {
        let (n, k) = (6 + (i as usize % 3), 2 + (i as usize % 3));
        let a = random_symmetric(n, 100 + i);
        let b = random_spd(n, 200 + i);
        // Every other instance has rank-deficient D.
        let d = if i % 2 == 0 {
            presets::random_rank_r(n, k, k - 1, 300 + i)
        } else {
            presets::random_gaussian(n, k, 300 + i)
        };
        let family = if i % 4 < 2 {
            Family::Alpha
        } else {
            Family::Theta
        };
        let p = make(family, &a, &b, &d, 0.3 + 0.4 * i as f64);
        let x = random_stiefel(n, k, 400 + i);
        let r = fd_validate(
            &p,
            &x,
            &FdOptions {
                seed: i,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.passes(tol), "instance {i}: {r:?}");
        assert!(r.dg.is_some() && r.dm.is_some());
    }
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

#[test]
fn lyapunov_matches_kronecker_oracle() {
    for (k, seed) in [(1, 1u64), (2, 2), (4, 3), (7, 4)] {
        let m = random_spd(k, seed);
        let c = random_symmetric(k, seed + 50);
        let l = solve_lyapunov_spd(&m, &c).unwrap();
        let id = Mat::identity(k, k);
        let big = kron(&id, &m) + kron(&m.transpose(), &id);
        let vec_l = big
            .lu()
            .solve(&DVector::from_column_slice(c.as_slice()))
            .unwrap();
        let oracle = Mat::from_column_slice(k, k, vec_l.as_slice());
        assert!(
            (&l - &oracle).norm() <= 1e-10 * oracle.norm().max(1.0),
            "k = {k}"
        );
    }
}

#[test]
fn alignment_beats_sampled_rotations() {
    for (n, k, r, seed) in [(5, 2, 2, 1u64), (6, 3, 3, 2), (6, 3, 2, 3)] {
        let d = presets::random_rank_r(n, k, r, seed);
        let x = random_stiefel(n, k, seed + 10);
        let best = trace_product(align(&x, &d).unwrap().aligned_x.as_mat(), &d);
        let xd = x.as_mat().transpose() * &d;
        for s in 0..10_000u64 {
            let q = random_orthogonal(k, 1_000_000 * seed + s);
            let v = trace_product(&q, &xd);
            assert!(
                best >= v - 1e-12 * best.abs().max(1.0),
                "rotation {s}: {best} < {v}"
            );
        }
    }
}

#[test]
fn g_is_unitarily_invariant() {
    for (n, k, r, seed) in [(6, 3, 3, 7u64), (6, 3, 2, 8), (8, 4, 1, 9)] {
        let a = random_symmetric(n, seed);
        let b = random_spd(n, seed + 1);
        let d = presets::random_rank_r(n, k, r, seed + 2);
        for family in [Family::Alpha, Family::Theta] {
            let p = make(family, &a, &b, &d, 0.7);
            let x = random_stiefel(n, k, seed + 3);
            let g0 = g_matrix(&p, x.as_mat()).unwrap().g;
            for s in 0..20u64 {
                let q = random_orthogonal(k, 77 * seed + s);
                let g = g_matrix(&p, &(x.as_mat() * q)).unwrap().g;
                assert!(
                    (&g - &g0).norm() <= 1e-10 * g0.norm(),
                    "{family:?} rotation {s}"
                );
            }
        }
    }
}

#[test]
fn canonical_polar_reconstructs_xtd() {
    let d = presets::random_rank_r(7, 4, 2, 5);
    let f = factor_d(&d, 1e-12).unwrap();
    assert_eq!(f.r, 2);
    let x = random_stiefel(7, 4, 6);
    let b = canonical_polar(x.as_mat(), &f).unwrap();
    let xd = x.as_mat().transpose() * &d;
    assert!((&b.q_o * &b.m - &xd).norm() <= 1e-12 * xd.norm());
    assert!(
        (b.trace_m() - xd.clone().svd(false, false).singular_values.sum()).abs()
            <= 1e-12 * xd.norm()
    );
}

#[test]
fn q_is_negative_semidefinite_at_paper_solutions() {
    for (name, p, x) in paper_solutions() {
        let cert = certify(&p, &x, &CertifyOptions::default()).unwrap();
        let ops = RateOperators::new(&p, cert).unwrap();
        for s in 0..200u64 {
            let mut z = presets::random_gaussian(ops.rows(), ops.cols(), 9000 + s);
            z /= z.norm();
            let v = ops.quadratic_form(&z).unwrap();
            assert!(v <= 1e-8, "{name}: tr(ZᵀQ(Z)) = {v}");
        }
    }
}

#[test]
fn dense_and_matrix_free_radius_agree() {
    for (name, p, x) in paper_solutions() {
        let cert = certify(&p, &x, &CertifyOptions::default()).unwrap();
        let ops = RateOperators::new(&p, cert).unwrap();
        for sigma in [None, Some(3.0)] {
            let dense = ops.rho(
                sigma,
                &SpectralOptions {
                    method: SpectralMethod::Dense,
                    ..Default::default()
                },
            );
            let power = ops.rho(
                sigma,
                &SpectralOptions {
                    method: SpectralMethod::Power,
                    ..Default::default()
                },
            );
            let (dense, power) = match (dense, power) {
                (Ok(d), Ok(p)) => (d, p),
                // A singular scaling at this σ is legitimate; both paths must agree on it.
                (Err(_), Err(_)) => continue,
                other => panic!("{name}: paths disagree on admissibility {other:?}"),
            };
            assert!(power.converged, "{name}");
            assert!(
                (dense.rho - power.rho).abs() <= 1e-6,
                "{name} σ={sigma:?}: {} vs {}",
                dense.rho,
                power.rho
            );
        }
    }
}

#[test]
fn dense_and_matrix_free_radius_agree_on_generated_instance() {
    let n = 30;
    let (a, b) = (presets::tridiag(n), presets::diag_iota(n));
    let d = presets::random_rank_r(n, 6, 3, 11);
    let (p, x) = solve_by_continuation(Family::Theta, &(a, b, d), 0.5, 6, 20.0);
    let ops = RateOperators::new(&p, certify(&p, &x, &CertifyOptions::default()).unwrap()).unwrap();
    let l = ops.l_operator();
    let dense = spectral_radius(
        &l,
        &SpectralOptions {
            method: SpectralMethod::Dense,
            ..Default::default()
        },
    )
    .unwrap();
    let power = spectral_radius(
        &l,
        &SpectralOptions {
            method: SpectralMethod::Power,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(power.converged);
    assert!(
        (dense.rho - power.rho).abs() <= 1e-6,
        "{} vs {}",
        dense.rho,
        power.rho
    );
}

#[test]
fn scf_keeps_orthonormality() {
    let cases = [
        (Family::Alpha, presets::example1(), 0.6, 0.0),
        (Family::Theta, presets::example5(), 3.0, 0.0),
        (Family::Alpha, presets::example2(), 0.5, 2.0),
    ];
    for (family, (a, b, d), t, shift) in cases {
        let p = make(family, &a, &b, &d, t);
        let mut x = random_stiefel(3, d.ncols(), 12);
        for i in 0..100 {
            x = scf_step(&p, &x, shift).unwrap().next;
            assert!(
                orthonormality_drift(x.as_mat()) <= 1e-12,
                "{family:?} step {i}"
            );
        }
    }
}

#[test]
fn larger_instance_keeps_orthonormality() {
    let n = 60;
    let p = make(
        Family::Theta,
        &presets::tridiag(n),
        &presets::diag_iota(n),
        &presets::random_rank_r(n, 8, 4, 3),
        1.0,
    );
    let mut x: StiefelPoint = random_stiefel(n, 8, 4);
    for i in 0..100 {
        x = scf_step(&p, &x, 0.0).unwrap().next;
        assert!(orthonormality_drift(x.as_mat()) <= 1e-12, "step {i}");
    }
}
