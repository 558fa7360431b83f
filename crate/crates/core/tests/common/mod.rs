#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let m = normal_matrix(rng, n, n);
    (&m + &m.t()) * 0.5
}

/// `MᵀM + shift·I`, comfortably positive definite for `shift > 0`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Array2<f64> {
    let m = normal_matrix(rng, n, n);
    m.t().dot(&m) + Array2::<f64>::eye(n) * shift
}

/// SPD matrix with the given eigenvalues and a random orthonormal basis.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, values: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let n = values.len();
    let q = random_orthogonal(rng, n);
    let d = Array2::from_diag(&Array1::from(values.to_vec()));
    (q.dot(&d).dot(&q.t()), q)
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let m = to_na(&normal_matrix(rng, n, n));
    from_na(&m.qr().q())
}

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

pub fn rel_err(got: &Array1<f64>, want: &Array1<f64>) -> f64 {
    norm(&(got - want)) / norm(want).max(f64::MIN_POSITIVE)
}

pub fn rel_err_mat(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    frob(&(got - want)) / frob(want).max(f64::MIN_POSITIVE)
}

/// Dense solve via nalgebra's LU.
pub fn dense_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let x = to_na(a)
        .lu()
        .solve(&nalgebra::DVector::from_iterator(b.len(), b.iter().copied()))
        .expect("oracle matrix is invertible");
    Array1::from_iter(x.iter().copied())
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
pub fn max_principal_angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let qa = to_na(a).qr().q();
    let qb = to_na(b).qr().q();
    let s = (qa.transpose() * qb).singular_values();
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min);
    smallest.clamp(-1.0, 1.0).acos()
}

/// Ascending eigenvalues of a symmetric matrix via nalgebra.
pub fn oracle_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}
