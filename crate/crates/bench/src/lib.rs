//! Fixtures shared by the benchmarks.

use ndarray::{Array1, Array2};
use probhess::linalg::thin_qr;
use probhess::problems::ExactQuadratic;
use probhess::{LowRankFactorPair, MatrixPrior, NoiseModel, ObservationSet, Preconditioner, SpectralApprox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
}

/// Random orthonormal `n × k` columns.
pub fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    thin_qr(&uniform_matrix(rng, n, k)).expect("full-rank draw").0
}

/// SPD matrix with log-spaced eigenvalues from `1` up to `cond`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, cond: f64) -> Array2<f64> {
    let q = orthonormal(rng, n, n);
    let values = Array1::from_shape_fn(n, |i| cond.powf(i as f64 / (n - 1).max(1) as f64));
    (&q * &values).dot(&q.t())
}

pub fn factor_pair(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LowRankFactorPair {
    LowRankFactorPair::new(uniform_matrix(rng, n, m), uniform_matrix(rng, n, m)).expect("matching shapes")
}

/// `m` noisy observations of an SPD matrix of size `n`.
pub fn observations(rng: &mut ChaCha8Rng, n: usize, m: usize, lambda0: f64) -> (MatrixPrior, NoiseModel, ObservationSet) {
    let b = spd(rng, n, 1e3);
    let s = uniform_matrix(rng, n, m);
    let y = b.dot(&s) + uniform_matrix(rng, n, m) * 1e-2;
    let noise = NoiseModel::new(lambda0).expect("positive noise");
    let obs = ObservationSet::from_columns(s, y, &noise).expect("matching shapes");
    (MatrixPrior::new(1.0, 1.0, n).expect("valid prior"), noise, obs)
}

pub fn preconditioner(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Preconditioner {
    let values = Array1::from_shape_fn(k, |i| 1e3 / (i + 1) as f64);
    let sp = SpectralApprox::new(orthonormal(rng, n, k), values).expect("orthonormal basis");
    probhess::build(sp, 1.0, 1.0).expect("positive spectrum").0
}

pub fn quadratic(rng: &mut ChaCha8Rng, n: usize) -> ExactQuadratic {
    let b = spd(rng, n, 1e4);
    ExactQuadratic::new(b, uniform_vector(rng, n), 1)
}
