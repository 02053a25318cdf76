//! Printed test matrices and the structured generators used by the larger
//! examples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Mat;

fn a1() -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[
            -3.242, -0.450, 1.807, -0.450, -1.630, 0.790, 1.807, 0.790, 0.226,
        ],
    )
}

fn b1() -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[
            0.592, 1.873, 0.175, 1.873, 6.332, 0.617, 0.175, 0.617, 0.488,
        ],
    )
}

/// `(A, B, D)` with `k = 1`. Also used for the θ-family runs.
pub fn example1() -> (Mat, Mat, Mat) {
    (
        a1(),
        b1(),
        Mat::from_column_slice(3, 1, &[-9.122, 0.421, 3.134]),
    )
}

/// `(A, B, D)` with `k = 2`; same `A`, `B` as [`example1`].
pub fn example2() -> (Mat, Mat, Mat) {
    (
        a1(),
        b1(),
        Mat::from_row_slice(3, 2, &[-1.430, 2.768, -0.120, -0.630, 1.098, 2.229]),
    )
}

/// `(A, B, D)` with `k = 2`, θ-family.
pub fn example5() -> (Mat, Mat, Mat) {
    (
        Mat::from_row_slice(
            3,
            3,
            &[
                1.145, -0.095, 0.514, -0.095, 0.838, 1.022, 0.514, 1.022, -1.223,
            ],
        ),
        Mat::from_row_slice(
            3,
            3,
            &[
                0.582, -0.037, 0.025, -0.037, 0.183, 0.043, 0.025, 0.043, 0.239,
            ],
        ),
        Mat::from_row_slice(3, 2, &[0.760, 0.258, 0.011, 0.774, 0.180, 0.520]),
    )
}

/// `tridiag(−1, 2, −1)` of order `n`.
pub fn tridiag(n: usize) -> Mat {
    Mat::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    })
}

/// `diag(1, 2, …, n)`.
pub fn diag_iota(n: usize) -> Mat {
    Mat::from_fn(n, n, |i, j| if i == j { (i + 1) as f64 } else { 0.0 })
}

/// Matrix with i.i.d. standard normal entries.
pub fn random_gaussian(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `D = D1·Pᵀ` with Gaussian `D1` (`n × r`) and `P` (`k × r`) orthonormal,
/// so `rank D = r` almost surely.
pub fn random_rank_r(n: usize, k: usize, r: usize, seed: u64) -> Mat {
    let d1 = random_gaussian(n, r, seed);
    let g = random_gaussian(k, r, seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let p = g.qr().q();
    d1 * p.transpose()
}
