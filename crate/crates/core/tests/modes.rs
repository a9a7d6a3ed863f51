mod common;

use common::covariance_eigenvalues;
use elasto::modes::learn_modes_from_arrays;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn snapshot_eigenvalues_match_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..5 {
        let dims = (6 + trial, 5);
        let n = 9 + trial;
        let fields: Vec<Array2<f64>> = (0..n)
            .map(|_| Array2::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let views: Vec<_> = fields.iter().map(|f| f.view()).collect();
        let basis = learn_modes_from_arrays(&views, 4).unwrap();
        let samples: Vec<Vec<f64>> = fields.iter().map(|f| f.iter().copied().collect()).collect();
        let direct = covariance_eigenvalues(&samples);
        for (a, b) in basis.eigenvalues().iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-8 * direct[0], "{a} vs {b}");
        }
        // The snapshot method sees only n - 1 non-zero directions.
        assert!(direct[n - 1..].iter().all(|v| v.abs() <= 1e-10 * direct[0]));
    }
}

#[test]
fn modes_are_orthonormal_eigenvectors_of_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let dims = (8, 4);
    let fields: Vec<Array2<f64>> = (0..12)
        .map(|_| Array2::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0)))
        .collect();
    let views: Vec<_> = fields.iter().map(|f| f.view()).collect();
    let basis = learn_modes_from_arrays(&views, 5).unwrap();
    let modes = basis.modes();
    let gram = modes.dot(&modes.t());
    for a in 0..5 {
        for b in 0..5 {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((gram[[a, b]] - want).abs() <= 1e-10);
        }
    }
    let d = dims.0 * dims.1;
    let mut x = Array2::zeros((12, d));
    for (k, f) in fields.iter().enumerate() {
        for (t, v) in f.iter().enumerate() {
            x[[k, t]] = v - basis.mean()[t];
        }
    }
    let cov = x.t().dot(&x) / 12.0;
    for k in 0..5 {
        let v = modes.row(k);
        let cv = cov.dot(&v);
        for t in 0..d {
            assert!((cv[t] - basis.eigenvalues()[k] * v[t]).abs() <= 1e-9);
        }
    }
}
