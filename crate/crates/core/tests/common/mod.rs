//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

/// Minimum path cost through a layered label graph, found with Dijkstra's
/// algorithm on integer edge weights. Node `(i, k)` costs `costs[i][k]`;
/// moving from label `k` to `k'` costs `alpha * (k - k')^2`.
pub fn shortest_path_cost(costs: &[Vec<i64>], alpha: i64) -> i64 {
    let m = costs.len();
    let width = costs[0].len();
    let source = m * width;
    let sink = source + 1;
    let mut dist = vec![i64::MAX; m * width + 2];
    let mut heap = BinaryHeap::new();
    dist[source] = 0;
    heap.push(Reverse((0i64, source)));
    while let Some(Reverse((d, node))) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        if node == sink {
            return d;
        }
        let mut relax = |next: usize, w: i64, heap: &mut BinaryHeap<Reverse<(i64, usize)>>| {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Reverse((nd, next)));
            }
        };
        if node == source {
            for k in 0..width {
                relax(k, costs[0][k], &mut heap);
            }
            continue;
        }
        let (i, k) = (node / width, node % width);
        if i + 1 == m {
            relax(sink, 0, &mut heap);
            continue;
        }
        for kn in 0..width {
            let jump = kn as i64 - k as i64;
            relax((i + 1) * width + kn, costs[i + 1][kn] + alpha * jump * jump, &mut heap);
        }
    }
    unreachable!("sink is always reachable")
}

pub fn to_array(costs: &[Vec<i64>]) -> Array2<f64> {
    Array2::from_shape_fn((costs.len(), costs[0].len()), |(i, k)| costs[i][k] as f64)
}

/// Least squares through a QR factorization (no normal equations).
pub fn qr_least_squares(a: &Array2<f64>, c: &Array1<f64>) -> Vec<f64> {
    let (k, n) = a.dim();
    let am = DMatrix::from_fn(k, n, |i, j| a[[i, j]]);
    let cv = DVector::from_iterator(k, c.iter().copied());
    let qr = am.qr();
    let qtc = qr.q().transpose() * cv;
    let r = qr.r();
    let x = r
        .solve_upper_triangular(&qtc.rows(0, n).into_owned())
        .expect("full column rank");
    x.iter().copied().collect()
}

/// Eigenvalues of the dense covariance `(1/n) X'ᵀ X'` of centred samples,
/// descending.
pub fn covariance_eigenvalues(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

/// Straight-line mean and population variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (mean, ss / n)
}
