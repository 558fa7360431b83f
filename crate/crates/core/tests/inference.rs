mod common;

use common::*;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use probhess::{infer_noise_free, infer_noisy, MatrixPrior, NoiseModel, ObservationSet, PosteriorMean};
use proptest::prelude::*;

/// X from the explicit (N·m)×(N·m) system
/// `(W ⊗ SᵀWS + Λ ⊗ diag(λ0‖sᵢ‖²))·vec X = vec(Y − b0·S)`, row-major vec.
fn kronecker_oracle(b0: f64, w0: f64, lambda0: f64, s: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let (n, m) = s.dim();
    let w = DMatrix::<f64>::identity(n, n) * w0;
    let lam = DMatrix::<f64>::identity(n, n) * lambda0;
    let gram = to_na(&(s.t().dot(s) * w0));
    let diag = DMatrix::from_fn(m, m, |i, j| if i == j { lambda0 * s.column(i).dot(&s.column(i)) } else { 0.0 });
    let system = w.kronecker(&gram.transpose()) + lam.kronecker(&diag);
    let delta = y - &(s * b0);
    let rhs = nalgebra::DVector::from_iterator(n * m, delta.iter().copied());
    let x = system.lu().solve(&rhs).expect("oracle system is invertible");
    Array2::from_shape_vec((n, m), x.iter().copied().collect()).unwrap()
}

fn instance(seed: u64, n: usize, m: usize) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng(seed);
    (normal_matrix(&mut r, n, m), normal_matrix(&mut r, n, m))
}

fn posterior(b0: f64, w0: f64, lambda0: f64, s: &Array2<f64>, y: &Array2<f64>) -> PosteriorMean {
    let prior = MatrixPrior::new(b0, w0, s.nrows()).unwrap();
    let noise = NoiseModel::new(lambda0).unwrap();
    let obs = ObservationSet::from_columns(s.clone(), y.clone(), &noise).unwrap();
    infer_noisy(&prior, &noise, &obs).unwrap()
}

#[test]
fn five_by_three_matches_kronecker_system() {
    let (s, y) = instance(11, 5, 3);
    let post = posterior(0.0, 1.0, 0.1, &s, &y);
    let x = kronecker_oracle(0.0, 1.0, 0.1, &s, &y);
    // A = W·X
    assert!(rel_err_mat(post.a(), &x) < 1e-8);
    assert!(rel_err_mat(post.c(), &s) < 1e-15);
}

#[test]
fn vanishing_noise_approaches_interpolant() {
    let (s, y) = instance(12, 6, 3);
    let prior = MatrixPrior::new(0.5, 2.0, 6).unwrap();
    let exact = infer_noise_free(
        &prior,
        &ObservationSet::from_columns(s.clone(), y.clone(), &NoiseModel::noise_free()).unwrap(),
    )
    .unwrap();
    let near = posterior(0.5, 2.0, 1e-12, &s, &y);
    assert!(rel_err_mat(&near.to_dense(), &exact.to_dense()) < 1e-6);
}

#[test]
fn overwhelming_noise_returns_prior() {
    let (s, y) = instance(13, 6, 3);
    let post = posterior(1.5, 1.0, 1e12, &s, &y);
    let prior = Array2::<f64>::eye(6) * 1.5;
    assert!(frob(&(post.to_dense() - prior)) < 1e-9);
}

#[test]
fn noise_free_interpolation_six_by_three() {
    let (s, y) = instance(14, 6, 3);
    let prior = MatrixPrior::new(0.3, 1.0, 6).unwrap();
    let obs = ObservationSet::from_columns(s.clone(), y.clone(), &NoiseModel::noise_free()).unwrap();
    let post = infer_noise_free(&prior, &obs).unwrap();
    assert!(rel_err_mat(&post.to_dense().dot(&s), &y) < 1e-10);
}

#[test]
fn apply_and_solve_edge_cases() {
    let prior = MatrixPrior::new(2.0, 1.0, 4).unwrap();
    let post = PosteriorMean::prior_only(prior);
    let v = Array1::from(vec![1.0, -2.0, 0.5, 4.0]);
    assert_eq!(post.apply(&v).unwrap(), &v * 2.0);
    assert_eq!(post.solve(&v).unwrap(), &v / 2.0);
    assert_eq!(post.apply(&Array1::zeros(4)).unwrap(), Array1::<f64>::zeros(4));
    assert!(post.apply(&Array1::zeros(3)).is_err());
}

#[test]
fn shrinkage_is_monotone_in_noise() {
    for seed in 0..20 {
        let (s, y) = instance(100 + seed, 7, 3);
        let mut last = f64::INFINITY;
        for lambda0 in [1e-6, 1e-4, 1e-2, 1e-1, 1.0, 10.0, 1e3] {
            let post = posterior(0.7, 1.3, lambda0, &s, &y);
            let size = frob(&post.factors.to_dense());
            assert!(size <= last * (1.0 + 1e-12), "seed {seed}: {size} > {last} at λ0={lambda0}");
            last = size;
        }
    }
}

#[test]
fn json_round_trip() {
    let (s, y) = instance(15, 5, 2);
    let post = posterior(0.2, 1.0, 0.3, &s, &y);
    let text = serde_json::to_string(&post).unwrap();
    let back: PosteriorMean = serde_json::from_str(&text).unwrap();
    assert_eq!(back, post);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noisy_inference_matches_kronecker_oracle(
        seed in any::<u64>(),
        n in 1usize..=8,
        m in 1usize..=4,
        lambda0 in prop::sample::select(vec![0.01, 0.1, 1.0]),
        b0 in -1.0f64..2.0,
        w0 in 0.2f64..3.0,
    ) {
        let (s, y) = instance(seed, n, m);
        let post = posterior(b0, w0, lambda0, &s, &y);
        let x = kronecker_oracle(b0, w0, lambda0, &s, &y);
        prop_assert!(rel_err_mat(post.a(), &(x * w0)) <= 1e-8);
    }

    #[test]
    fn noise_free_posterior_interpolates(seed in any::<u64>(), n in 2usize..=10, m in 1usize..=5) {
        let m = m.min(n);
        let (s, y) = instance(seed, n, m);
        let prior = MatrixPrior::new(0.4, 1.7, n).unwrap();
        let obs = ObservationSet::from_columns(s.clone(), y.clone(), &NoiseModel::noise_free()).unwrap();
        let post = infer_noise_free(&prior, &obs).unwrap();
        let bs = Array2::from_shape_fn((n, m), |(i, j)| post.apply(&s.column(j).to_owned()).unwrap()[i]);
        prop_assert!(rel_err_mat(&bs, &y) <= 1e-10);
    }

    #[test]
    fn column_permutation_leaves_posterior_unchanged(seed in any::<u64>(), n in 2usize..=8, m in 2usize..=4) {
        let (s, y) = instance(seed, n, m);
        let perm: Vec<usize> = (0..m).rev().collect();
        let ps = s.select(ndarray::Axis(1), &perm);
        let py = y.select(ndarray::Axis(1), &perm);
        let a = posterior(0.5, 1.0, 0.2, &s, &y).to_dense();
        let b = posterior(0.5, 1.0, 0.2, &ps, &py).to_dense();
        prop_assert!(frob(&(a - b)) <= 1e-12 * frob(&y).max(1.0) * 10.0);
    }

    #[test]
    fn apply_matches_dense_and_solve_inverts(seed in any::<u64>(), n in 1usize..=12, m in 0usize..=4) {
        let m = m.min(n);
        let mut r = rng(seed);
        let s = normal_matrix(&mut r, n, m);
        // Y = B·S for an SPD B keeps the noise-free posterior well conditioned
        let b = random_spd(&mut r, n, 1.0);
        let y = b.dot(&s);
        let post = posterior(1.0, 1.0, 0.05, &s, &y);
        let v = normal_vector(&mut r, n);
        let dense = post.to_dense();
        prop_assert!(rel_err(&post.apply(&v).unwrap(), &dense.dot(&v)) <= 1e-12);
        if let Ok(x) = post.solve(&v) {
            prop_assert!(rel_err(&post.apply(&x).unwrap(), &v) <= 1e-8);
        }
    }
}
