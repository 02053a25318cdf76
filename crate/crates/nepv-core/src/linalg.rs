//! Dense kernels: ordered symmetric eigendecomposition, economy SVD, the
//! SPD Lyapunov solve `M L + L M = C`, principal angles between subspaces and
//! the spectral radius of a linear map on matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NepvError, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;

/// Default relative symmetry tolerance for eigen-solves.
pub const DEFAULT_SYM_TOL: f64 = 1e-10;
/// Default relative rank tolerance (relative to the largest singular value).
pub const DEFAULT_RANK_TOL: f64 = 1e-12;
/// Default orthonormality tolerance for Stiefel points.
pub const DEFAULT_ORTH_TOL: f64 = 1e-10;

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Matrix 1-norm: the maximum absolute column sum.
pub fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    // tr(A^T B)
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// `‖A - A^T‖_F / ‖A‖_F`, zero for the zero matrix.
pub fn asymmetry(a: &Mat) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

/// `‖X^T X - I‖_F`.
pub fn orthonormality_drift(x: &Mat) -> f64 {
    let k = x.ncols();
    (x.transpose() * x - Mat::identity(k, k)).norm()
}

/// Orthonormal polar factor `U V^T` of a full column rank matrix.
pub fn polar_orthonormalize(x: &Mat) -> Mat {
    let (u, _, v) = jacobi_svd(x);
    u * v.transpose()
}

/// One-sided (Hestenes) Jacobi SVD: `m = U·diag(σ)·Vᵀ` with `U` of size
/// `rows × p`, `V` of size `cols × p`, `p = min(rows, cols)`, both with
/// orthonormal columns. Singular values come back unsorted.
///
/// Used instead of nalgebra's bidiagonal SVD, which returns inaccurate
/// singular vectors on some exactly rank-deficient inputs.
fn jacobi_svd(m: &Mat) -> (Mat, Vec<f64>, Mat) {
    if m.nrows() < m.ncols() {
        let (u, s, v) = jacobi_svd(&m.transpose());
        return (v, s, u);
    }
    let (rows, p) = m.shape();
    let mut a = m.clone();
    let mut v = Mat::identity(p, p);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    // Normalize in descending order; columns that carry no direction are
    // replaced by a completion of the orthonormal set.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));
    let mut u = Mat::zeros(rows, p);
    let mut done: Vec<usize> = Vec::with_capacity(p);
    let project_out = |u: &Mat, done: &[usize], col: &mut DVector<f64>| {
        for _pass in 0..2 {
            for &q in done {
                let proj = u.column(q).dot(col);
                *col -= u.column(q) * proj;
            }
        }
    };
    for &j in &order {
        let mut col = if sigma[j] > rows as f64 * f64::EPSILON * smax && sigma[j] > 0.0 {
            a.column(j) / sigma[j]
        } else {
            DVector::zeros(rows)
        };
        project_out(&u, &done, &mut col);
        if col.norm() < 0.5 {
            // The unit vector with the largest residual; its norm is at
            // least sqrt((rows − done)/rows).
            let mut best = DVector::zeros(rows);
            for e in 0..rows {
                let mut c = DVector::zeros(rows);
                c[e] = 1.0;
                project_out(&u, &done, &mut c);
                if c.norm() > best.norm() {
                    best = c;
                }
            }
            col = best;
            project_out(&u, &done, &mut col);
        }
        let nrm = col.norm();
        u.set_column(j, &(col / nrm));
        done.push(j);
    }
    (u, sigma, v)
}

fn check_square(s: &Mat, what: &str) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(NepvError::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(s: &Mat, tol: f64) -> Result<()> {
    let asym = asymmetry(s);
    if asym > tol {
        return Err(NepvError::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in
/// non-increasing order.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `values[i]`.
    pub vectors: Mat,
}

/// Top-`k` part of a symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
    /// `λ_{k+1}`, absent when `k = n`.
    pub next_value: Option<f64>,
}

impl TopEigen {
    /// `λ_k − λ_{k+1}`, or `None` when `k = n`.
    pub fn gap(&self) -> Option<f64> {
        self.next_value
            .map(|next| self.values[self.values.len() - 1] - next)
    }
}

/// Full symmetric eigendecomposition, sorted descending.
///
/// The input is symmetrized after passing the relative symmetry check
/// `‖S − Sᵀ‖_F ≤ sym_tol·‖S‖_F`.
pub fn sym_eig(s: &Mat, sym_tol: f64) -> Result<SymEigResult> {
    check_square(s, "symmetric matrix")?;
    check_symmetric(s, sym_tol)?;
    let n = s.nrows();
    if n == 0 {
        return Ok(SymEigResult {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let eig = symmetrize(s).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the routine's order among ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigResult { values, vectors })
}

/// The `k` largest eigenpairs of a symmetric matrix, plus `λ_{k+1}`.
pub fn sym_eig_topk(s: &Mat, k: usize, sym_tol: f64) -> Result<TopEigen> {
    let n = s.nrows();
    if k == 0 || k > n {
        return Err(NepvError::InvalidArgument(format!(
            "k = {k} must lie in 1..={n}"
        )));
    }
    let full = sym_eig(s, sym_tol)?;
    Ok(TopEigen {
        values: full.values[..k].to_vec(),
        vectors: full.vectors.columns(0, k).into_owned(),
        next_value: full.values.get(k).copied(),
    })
}

/// Economy SVD with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors, `rows × p` with `p = min(rows, cols)`.
    pub u: Mat,
    pub sigma: Vec<f64>,
    /// Right singular vectors, `cols × p`.
    pub v: Mat,
    /// Count of `σ_i > rank_tol·σ_1`.
    pub numerical_rank: usize,
}

impl SvdResult {
    pub fn u1(&self) -> Mat {
        self.u.columns(0, self.numerical_rank).into_owned()
    }
    pub fn u2(&self) -> Mat {
        self.u
            .columns(self.numerical_rank, self.u.ncols() - self.numerical_rank)
            .into_owned()
    }
    pub fn v1(&self) -> Mat {
        self.v.columns(0, self.numerical_rank).into_owned()
    }
    pub fn v2(&self) -> Mat {
        self.v
            .columns(self.numerical_rank, self.v.ncols() - self.numerical_rank)
            .into_owned()
    }
    pub fn sigma1(&self) -> &[f64] {
        &self.sigma[..self.numerical_rank]
    }
    /// `U diag(σ) Vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

pub fn svd_econ(m: &Mat, rank_tol: f64) -> Result<SvdResult> {
    if rank_tol.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) {
        return Err(NepvError::InvalidArgument(format!(
            "rank_tol = {rank_tol} must be positive"
        )));
    }
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return Ok(SvdResult {
            u: Mat::zeros(rows, 0),
            sigma: Vec::new(),
            v: Mat::zeros(cols, 0),
            numerical_rank: 0,
        });
    }
    let (u_raw, sv, v_raw) = jacobi_svd(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    let u = Mat::from_fn(rows, p, |r, c| u_raw[(r, order[c])]);
    let v = Mat::from_fn(cols, p, |r, c| v_raw[(r, order[c])]);
    let cutoff = rank_tol * sigma[0];
    let numerical_rank = sigma.iter().filter(|&&s| s > cutoff).count();
    Ok(SvdResult {
        u,
        sigma,
        v,
        numerical_rank,
    })
}

/// Solves `M L + L M = C` given the eigendecomposition `M = W diag(λ) Wᵀ`
/// with all `λ > 0`.
pub(crate) fn lyapunov_from_eig(w: &Mat, lambda: &[f64], c: &Mat) -> Mat {
    let mut ct = w.transpose() * c * w;
    for j in 0..lambda.len() {
        for i in 0..lambda.len() {
            ct[(i, j)] /= lambda[i] + lambda[j];
        }
    }
    symmetrize(&(w * ct * w.transpose()))
}

/// Unique symmetric solution `L` of `M1·L + L·M1 = C` for SPD `M1`.
///
/// Spectral method: `M1 = WΛWᵀ`, `L = W [(WᵀCW)_ij / (λ_i + λ_j)] Wᵀ`.
pub fn solve_lyapunov_spd(m1: &Mat, c: &Mat) -> Result<Mat> {
    check_square(m1, "M1")?;
    if c.shape() != m1.shape() {
        return Err(NepvError::DimensionMismatch(format!(
            "C is {}x{}, M1 is {}x{}",
            c.nrows(),
            c.ncols(),
            m1.nrows(),
            m1.ncols()
        )));
    }
    check_symmetric(c, DEFAULT_SYM_TOL)?;
    let eig = sym_eig(m1, DEFAULT_SYM_TOL)?;
    if let Some(&min) = eig.values.last() {
        if min <= 0.0 {
            return Err(NepvError::NotPositiveDefinite(format!(
                "smallest eigenvalue of M1 is {min:e}"
            )));
        }
    }
    Ok(lyapunov_from_eig(&eig.vectors, &eig.values, c))
}

/// Canonical angles between two `k`-dimensional subspaces.
#[derive(Debug, Clone)]
pub struct PrincipalAngles {
    /// Angles in `[0, π/2]`, non-decreasing.
    pub angles: Vec<f64>,
    /// `‖sin Θ‖_F`.
    pub sin_theta_fro: f64,
}

impl PrincipalAngles {
    pub fn max_angle(&self) -> f64 {
        self.angles.last().copied().unwrap_or(0.0)
    }
}

pub fn principal_angles(x: &Mat, y: &Mat) -> Result<PrincipalAngles> {
    if x.shape() != y.shape() {
        return Err(NepvError::DimensionMismatch(format!(
            "bases have shapes {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    for m in [x, y] {
        let drift = orthonormality_drift(m);
        if drift > DEFAULT_ORTH_TOL {
            return Err(NepvError::NotOrthonormal { drift });
        }
    }
    let k = x.ncols();
    let residual = x - y * (y.transpose() * x);
    let sin_theta_fro = residual.norm();
    let cos = svd_econ(&(x.transpose() * y), DEFAULT_RANK_TOL)?.sigma;
    // Singular values of (I - YYᵀ)X are the sines; ascending order matches
    // descending cosines. Small angles are taken from the sines.
    let mut sin = svd_econ(&residual, DEFAULT_RANK_TOL)?.sigma;
    sin.reverse();
    let angles = (0..k)
        .map(|i| {
            let c = cos[i].clamp(-1.0, 1.0);
            if c * c >= 0.5 {
                sin[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect();
    Ok(PrincipalAngles {
        angles,
        sin_theta_fro,
    })
}

/// A linear map on `rows × cols` real matrices.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, z: &Mat) -> Result<Mat>;

    fn dim(&self) -> usize {
        self.rows() * self.cols()
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn apply(&self, z: &Mat) -> Result<Mat> {
        (**self).apply(z)
    }
}

/// Matrix of `op` in the canonical basis `E_ij`, using column-major
/// vectorization: column `c` is `vec(op(E_c))`.
pub fn matricize<O: LinearOperator + ?Sized>(op: &O) -> Result<Mat> {
    let (r, c) = (op.rows(), op.cols());
    let m = r * c;
    let mut k = Mat::zeros(m, m);
    let mut basis = Mat::zeros(r, c);
    for idx in 0..m {
        basis[idx] = 1.0;
        let image = op.apply(&basis)?;
        basis[idx] = 0.0;
        k.column_mut(idx).copy_from_slice(image.as_slice());
    }
    Ok(k)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Largest relative deviation from linearity over a few random probes:
/// `‖op(aU + bV) − a·op(U) − b·op(V)‖ / (‖a·op(U)‖ + ‖b·op(V)‖)`.
pub fn linearity_defect<O: LinearOperator + ?Sized>(
    op: &O,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let u = random_matrix(&mut rng, op.rows(), op.cols());
        let v = random_matrix(&mut rng, op.rows(), op.cols());
        let (a, b) = (
            rng.random::<f64>() * 4.0 - 2.0,
            rng.random::<f64>() * 4.0 - 2.0,
        );
        let lhs = op.apply(&(&u * a + &v * b))?;
        let (ou, ov) = (op.apply(&u)? * a, op.apply(&v)? * b);
        let scale = ou.norm() + ov.norm();
        let err = (lhs - ou - ov).norm();
        worst = worst.max(if scale > 0.0 { err / scale } else { err });
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMethod {
    /// Matricize and take all eigenvalues.
    Dense,
    /// Matrix-free iteration on normalized operator applications
    /// (explicitly restarted Arnoldi).
    Power,
    /// `Dense` when the operator dimension is within the cap, else `Power`.
    Auto,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub method: SpectralMethod,
    /// Relative stabilization tolerance of the modulus estimate.
    pub tol: f64,
    /// Maximum number of restarts of the matrix-free path.
    pub max_iters: usize,
    pub dense_cap: usize,
    /// Krylov basis size per restart.
    pub krylov_dim: usize,
    pub seed: u64,
    /// Relative linearity defect above which the operator is rejected.
    pub linearity_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            method: SpectralMethod::Auto,
            tol: 1e-10,
            max_iters: 300,
            dense_cap: 1000,
            krylov_dim: 40,
            seed: 0x5eed,
            linearity_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralRadius {
    pub rho: f64,
    /// `Dense` or `Power`, never `Auto`.
    pub method: SpectralMethod,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn dense_eigenvalues(k: Mat) -> Result<Vec<Complex<f64>>> {
    let n = k.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(k, f64::EPSILON, 1000 * n.max(10))
        .ok_or_else(|| NepvError::EigenFailure("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Spectral radius of a linear operator on matrices.
pub fn spectral_radius<O: LinearOperator + ?Sized>(
    op: &O,
    opts: &SpectralOptions,
) -> Result<SpectralRadius> {
    let dim = op.dim();
    if dim == 0 {
        return Ok(SpectralRadius {
            rho: 0.0,
            method: SpectralMethod::Dense,
            converged: true,
            iterations: 0,
        });
    }
    let defect = linearity_defect(op, 2, opts.seed ^ 0x11)?;
    if defect > opts.linearity_tol {
        return Err(NepvError::NotLinear { deviation: defect });
    }
    let method = match opts.method {
        SpectralMethod::Auto if dim <= opts.dense_cap => SpectralMethod::Dense,
        SpectralMethod::Auto => SpectralMethod::Power,
        m => m,
    };
    match method {
        SpectralMethod::Dense => {
            if dim > opts.dense_cap {
                return Err(NepvError::DenseCapExceeded {
                    dim,
                    cap: opts.dense_cap,
                });
            }
            let eigs = dense_eigenvalues(matricize(op)?)?;
            let rho = eigs.iter().map(|z| cabs(*z)).fold(0.0, f64::max);
            Ok(SpectralRadius {
                rho,
                method,
                converged: true,
                iterations: 1,
            })
        }
        _ => arnoldi_radius(op, opts),
    }
}

/// Explicitly restarted Arnoldi for the largest-modulus eigenvalue.
///
/// Each cycle builds a Krylov basis of at most `krylov_dim` vectors from the
/// current start vector, takes the largest-modulus Ritz value, and restarts
/// from the real span of its Ritz vector. Stops once the modulus estimate
/// changes by at most `tol` (relative) between cycles and the Ritz residual
/// is below `sqrt(tol)`, or the Krylov space becomes invariant.
fn arnoldi_radius<O: LinearOperator + ?Sized>(
    op: &O,
    opts: &SpectralOptions,
) -> Result<SpectralRadius> {
    let (r, c) = (op.rows(), op.cols());
    let dim = r * c;
    let p = opts.krylov_dim.max(2).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start = DVector::from_fn(dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut prev = f64::NAN;
    let mut last = 0.0;
    for cycle in 1..=opts.max_iters.max(1) {
        let norm = start.norm();
        if norm == 0.0 {
            return Ok(SpectralRadius {
                rho: 0.0,
                method: SpectralMethod::Power,
                converged: true,
                iterations: cycle,
            });
        }
        let mut basis: Vec<DVector<f64>> = vec![start / norm];
        let mut h = Mat::zeros(p + 1, p);
        let mut size = p;
        let mut invariant = false;
        for j in 0..p {
            let z = Mat::from_column_slice(r, c, basis[j].as_slice());
            let mut w = DVector::from_column_slice(op.apply(&z)?.as_slice());
            let wnorm0 = w.norm();
            // Modified Gram-Schmidt with one reorthogonalization pass.
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let coef = b.dot(&w);
                    h[(i, j)] += coef;
                    w.axpy(-coef, b, 1.0);
                }
            }
            let wnorm = w.norm();
            h[(j + 1, j)] = wnorm;
            if wnorm <= 1e-13 * wnorm0.max(f64::MIN_POSITIVE) || wnorm == 0.0 || basis.len() == dim
            {
                size = j + 1;
                invariant = true;
                break;
            }
            basis.push(w / wnorm);
        }
        let hs = h.view((0, 0), (size, size)).into_owned();
        let ritz = dense_eigenvalues(hs.clone())?;
        let (theta, rho) =
            ritz.iter()
                .map(|z| (*z, cabs(*z)))
                .fold((Complex::new(0.0, 0.0), -1.0), |acc, v| {
                    if v.1 > acc.1 {
                        v
                    } else {
                        acc
                    }
                });
        last = rho;
        if invariant {
            return Ok(SpectralRadius {
                rho,
                method: SpectralMethod::Power,
                converged: true,
                iterations: cycle,
            });
        }
        // Ritz vector by inverse iteration on the small Hessenberg matrix.
        let y = ritz_vector(&hs, theta);
        let residual = h[(size, size - 1)] * cabs(y[size - 1])
            / y.iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
        let stable = (rho - prev).abs() <= opts.tol * rho.max(f64::MIN_POSITIVE);
        if stable && residual <= opts.tol.sqrt() * rho.max(1e-300) {
            return Ok(SpectralRadius {
                rho,
                method: SpectralMethod::Power,
                converged: true,
                iterations: cycle,
            });
        }
        prev = rho;
        let mut next = DVector::zeros(dim);
        for (i, b) in basis.iter().take(size).enumerate() {
            next.axpy(y[i].re + y[i].im, b, 1.0);
        }
        start = next;
    }
    Ok(SpectralRadius {
        rho: last,
        method: SpectralMethod::Power,
        converged: false,
        iterations: opts.max_iters,
    })
}

pub(crate) fn cabs(z: Complex<f64>) -> f64 {
    z.re.hypot(z.im)
}

fn ritz_vector(h: &Mat, theta: Complex<f64>) -> DVector<Complex<f64>> {
    let n = h.nrows();
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let shift = theta + Complex::new(scale * 1e-10, scale * 1e-10);
    let shifted = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let v = Complex::new(h[(i, j)], 0.0);
        if i == j {
            v - shift
        } else {
            v
        }
    });
    let lu = shifted.lu();
    let mut y = DVector::<Complex<f64>>::from_element(n, Complex::new(1.0, 0.0));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(next) => {
                let norm = next.norm();
                if !norm.is_finite() || norm == 0.0 {
                    break;
                }
                y = next.unscale(norm);
            }
            None => break,
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    struct MatOp(Mat, usize, usize);
    impl LinearOperator for MatOp {
        fn rows(&self) -> usize {
            self.1
        }
        fn cols(&self) -> usize {
            self.2
        }
        fn apply(&self, z: &Mat) -> Result<Mat> {
            let v = &self.0 * DVector::from_column_slice(z.as_slice());
            Ok(Mat::from_column_slice(self.1, self.2, v.as_slice()))
        }
    }

    #[test]
    fn topk_of_diagonal() {
        let s = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let top = sym_eig_topk(&s, 2, DEFAULT_SYM_TOL).unwrap();
        assert_eq!(top.values, vec![3.0, 2.0]);
        assert_eq!(top.gap(), Some(1.0));
        // spans {e1, e3}
        assert!(top.vectors.row(1).norm() < 1e-14);
    }

    #[test]
    fn topk_of_tridiagonal() {
        let n = 4;
        let s = Mat::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let top = sym_eig_topk(&s, 1, DEFAULT_SYM_TOL).unwrap();
        assert!((top.values[0] - (2.0 - 2.0 * (4.0 * PI / 5.0).cos())).abs() < 1e-13);
    }

    #[test]
    fn topk_rejects_bad_input() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            sym_eig_topk(&s, 1, DEFAULT_SYM_TOL),
            Err(NepvError::NotSymmetric { .. })
        ));
        let s = Mat::identity(3, 3);
        assert!(matches!(
            sym_eig_topk(&s, 0, DEFAULT_SYM_TOL),
            Err(NepvError::InvalidArgument(_))
        ));
        assert!(matches!(
            sym_eig_topk(&s, 4, DEFAULT_SYM_TOL),
            Err(NepvError::InvalidArgument(_))
        ));
    }

    #[test]
    fn svd_of_exactly_rank_deficient_product() {
        // Inputs of this shape defeat the bidiagonal SVD.
        for (n, k, r, seed) in [(30, 6, 3, 11), (7, 4, 2, 5), (40, 9, 1, 2)] {
            let d = crate::presets::random_rank_r(n, k, r, seed);
            for m in [d.clone(), d.transpose()] {
                let s = svd_econ(&m, DEFAULT_RANK_TOL).unwrap();
                assert_eq!(s.numerical_rank, r);
                assert!((s.reconstruct() - &m).norm() <= 1e-13 * m.norm());
                assert!(orthonormality_drift(&s.u) <= 1e-13);
                assert!(orthonormality_drift(&s.v) <= 1e-13);
            }
        }
    }

    #[test]
    fn svd_of_square_rank_deficient_completes_basis() {
        let d = crate::presets::random_rank_r(50, 50, 20, 27);
        let s = svd_econ(&d, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.numerical_rank, 20);
        assert!((s.reconstruct() - &d).norm() <= 1e-13 * d.norm());
        assert!(orthonormality_drift(&s.u) <= 1e-13);
        assert!(orthonormality_drift(&s.v) <= 1e-13);
    }

    #[test]
    fn svd_rank_of_diag() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let s = svd_econ(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.sigma, vec![2.0, 0.0]);
        assert_eq!(s.numerical_rank, 1);
        assert_eq!(s.u1().ncols(), 1);
        assert_eq!(s.v2().ncols(), 1);
    }

    #[test]
    fn svd_of_orthogonal_and_zero() {
        let (c, s) = (0.3_f64.cos(), 0.3_f64.sin());
        let q = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        let r = svd_econ(&q, DEFAULT_RANK_TOL).unwrap();
        assert!(r.sigma.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert_eq!(r.numerical_rank, 2);
        let z = svd_econ(&Mat::zeros(3, 2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.numerical_rank, 0);
        assert!(svd_econ(&q, 0.0).is_err());
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let c = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, -3.0]);
        let l = solve_lyapunov_spd(&Mat::identity(2, 2), &c).unwrap();
        assert!((l - &c * 0.5).norm() < 1e-15);
        let l = solve_lyapunov_spd(&Mat::from_element(1, 1, 2.0), &Mat::from_element(1, 1, 8.0))
            .unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        let bad = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_lyapunov_spd(&bad, &c),
            Err(NepvError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn angles_basic_cases() {
        let x = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(principal_angles(&x, &x).unwrap().max_angle() < 1e-15);
        let y = Mat::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let a = principal_angles(&x, &y).unwrap();
        assert!((a.angles[0] - PI / 2.0).abs() < 1e-15);
        assert!((a.sin_theta_fro - 1.0).abs() < 1e-15);
        let x = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let y = Mat::from_column_slice(2, 1, &[0.3_f64.cos(), 0.3_f64.sin()]);
        assert!((principal_angles(&x, &y).unwrap().angles[0] - 0.3).abs() < 1e-14);
        let bad = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            principal_angles(&bad, &x),
            Err(NepvError::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn spectral_radius_simple_operators() {
        let opts = SpectralOptions::default();
        let id = MatOp(Mat::identity(4, 4), 2, 2);
        for method in [SpectralMethod::Dense, SpectralMethod::Power] {
            let o = SpectralOptions { method, ..opts };
            assert!((spectral_radius(&id, &o).unwrap().rho - 1.0).abs() < 1e-12);
            let swap = MatOp(Mat::from_row_slice(2, 2, &[0.0, 2.0, 0.5, 0.0]), 2, 1);
            assert!((spectral_radius(&swap, &o).unwrap().rho - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_radius_of_nilpotent_shift() {
        struct Shift;
        impl LinearOperator for Shift {
            fn rows(&self) -> usize {
                3
            }
            fn cols(&self) -> usize {
                2
            }
            fn apply(&self, z: &Mat) -> Result<Mat> {
                let n = Mat::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
                Ok(n * z)
            }
        }
        for method in [SpectralMethod::Dense, SpectralMethod::Power] {
            let o = SpectralOptions {
                method,
                ..Default::default()
            };
            let rho = spectral_radius(&Shift, &o).unwrap().rho;
            // a 3x3 Jordan block moves its eigenvalues by about eps^(1/3)
            assert!(rho < 1e-4, "{method:?}: {rho:e}");
        }
    }

    #[test]
    fn dense_cap_is_enforced() {
        let id = MatOp(Mat::identity(4, 4), 2, 2);
        let o = SpectralOptions {
            method: SpectralMethod::Dense,
            dense_cap: 3,
            ..Default::default()
        };
        assert!(matches!(
            spectral_radius(&id, &o),
            Err(NepvError::DenseCapExceeded { dim: 4, cap: 3 })
        ));
        let o = SpectralOptions {
            dense_cap: 3,
            ..Default::default()
        };
        assert_eq!(
            spectral_radius(&id, &o).unwrap().method,
            SpectralMethod::Power
        );
    }

    #[test]
    fn nonlinear_operator_is_rejected() {
        struct Square;
        impl LinearOperator for Square {
            fn rows(&self) -> usize {
                2
            }
            fn cols(&self) -> usize {
                1
            }
            fn apply(&self, z: &Mat) -> Result<Mat> {
                Ok(z.map(|v| v * v))
            }
        }
        assert!(matches!(
            spectral_radius(&Square, &SpectralOptions::default()),
            Err(NepvError::NotLinear { .. })
        ));
    }

    #[test]
    fn one_norm_is_max_column_sum() {
        let m = Mat::from_row_slice(2, 2, &[1.0, -4.0, -2.0, 1.0]);
        assert_eq!(one_norm(&m), 5.0);
    }
}
