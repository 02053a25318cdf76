#![allow(dead_code)]

use nepv_core::linalg::{symmetrize, Mat};
use nepv_core::presets;
use nepv_core::problem::{make_alpha_problem, make_theta_problem, NepvProblem};
use nepv_core::scf::{initial_guess_linear, ScfOptions};
use nepv_core::sweep::{continuation, linspace, ContinuationOptions};
use nepv_core::StiefelPoint;

pub fn random_symmetric(n: usize, seed: u64) -> Mat {
    symmetrize(&presets::random_gaussian(n, n, seed))
}

pub fn random_spd(n: usize, seed: u64) -> Mat {
    let g = presets::random_gaussian(n, n, seed);
    g.transpose() * &g + Mat::identity(n, n) * n as f64
}

pub fn random_orthogonal(k: usize, seed: u64) -> Mat {
    presets::random_gaussian(k, k, seed).qr().q()
}

pub fn random_stiefel(n: usize, k: usize, seed: u64) -> StiefelPoint {
    StiefelPoint::orthonormalized(presets::random_gaussian(n, k, seed)).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Family {
    Alpha,
    Theta,
}

pub fn make(family: Family, a: &Mat, b: &Mat, d: &Mat, t: f64) -> NepvProblem {
    match family {
        Family::Alpha => make_alpha_problem(a, b, d, t).unwrap(),
        Family::Theta => make_theta_problem(a, b, d, t).unwrap(),
    }
}

/// Solution at `target` reached by warm-started continuation from 0.
pub fn solve_by_continuation(
    family: Family,
    (a, b, d): &(Mat, Mat, Mat),
    target: f64,
    steps: usize,
    fallback: f64,
) -> (NepvProblem, StiefelPoint) {
    let x0 = initial_guess_linear(a, b, d.ncols(), Some(d)).unwrap();
    let opts = ContinuationOptions {
        scf: ScfOptions {
            max_iters: 3000,
            record_history: false,
            ..Default::default()
        },
        fallback_shift: Some(fallback),
    };
    let pts = continuation(
        |t| Ok(make(family, a, b, d, t)),
        &linspace(0.0, target, steps),
        &x0,
        &opts,
    )
    .unwrap();
    let last = pts.last().unwrap();
    let x = last
        .solution()
        .expect("continuation endpoint did not converge")
        .clone();
    (make(family, a, b, d, target), x)
}

/// The four printed-matrix solutions used across the rate tests.
pub fn paper_solutions() -> Vec<(&'static str, NepvProblem, StiefelPoint)> {
    vec![
        {
            let (p, x) =
                solve_by_continuation(Family::Alpha, &presets::example1(), 0.46, 47, 100.0);
            ("ex1", p, x)
        },
        {
            let (p, x) =
                solve_by_continuation(Family::Alpha, &presets::example2(), 0.305, 62, 50.0);
            ("ex2", p, x)
        },
        {
            let (p, x) = solve_by_continuation(Family::Theta, &presets::example1(), 0.1, 11, 100.0);
            ("ex4", p, x)
        },
        {
            let (p, x) = solve_by_continuation(Family::Theta, &presets::example5(), 4.75, 96, 40.0);
            ("ex5", p, x)
        },
    ]
}
