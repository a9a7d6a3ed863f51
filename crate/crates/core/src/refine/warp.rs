//! Catmull-Rom resampling of a frame along a displacement field.

use ndarray::Array2;

use crate::par;
use crate::types::DisplacementField;

#[inline]
fn weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[inline]
fn weight_derivatives(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

/// Splits a coordinate clamped to `[0, n-1]` into a base index and fraction.
/// Returns whether the coordinate was clamped (its derivative is then zero).
#[inline]
fn locate(x: f64, n: usize) -> (isize, f64, bool) {
    let hi = (n - 1) as f64;
    let clamped = !(0.0..=hi).contains(&x);
    let x = x.clamp(0.0, hi);
    let base = (x.floor() as isize).min(n as isize - 1);
    (base, x - base as f64, clamped)
}

/// Value and partial derivatives (axial, lateral) of the bicubic interpolant
/// at `(z, x)`. Outside the frame the image is extended flat.
pub fn sample_with_gradient(img: &Array2<f64>, z: f64, x: f64) -> (f64, f64, f64) {
    let (m, l) = img.dim();
    let (zi, tz, zc) = locate(z, m);
    let (xi, tx, xc) = locate(x, l);
    let (wz, dwz) = (weights(tz), weight_derivatives(tz));
    let (wx, dwx) = (weights(tx), weight_derivatives(tx));
    let row = |k: isize| (zi + k - 1).clamp(0, m as isize - 1) as usize;
    let col = |k: isize| (xi + k - 1).clamp(0, l as isize - 1) as usize;
    let (mut v, mut gz, mut gx) = (0.0, 0.0, 0.0);
    for a in 0..4 {
        let r = row(a as isize);
        let (mut sv, mut sdx) = (0.0, 0.0);
        for b in 0..4 {
            let s = img[[r, col(b as isize)]];
            sv += wx[b] * s;
            sdx += dwx[b] * s;
        }
        v += wz[a] * sv;
        gz += dwz[a] * sv;
        gx += wz[a] * sdx;
    }
    (v, if zc { 0.0 } else { gz }, if xc { 0.0 } else { gx })
}

pub fn sample(img: &Array2<f64>, z: f64, x: f64) -> f64 {
    sample_with_gradient(img, z, x).0
}

/// `img(x + d(x))` with a mask of samples whose source stayed inside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: Array2<f64>,
    pub mask: Array2<bool>,
}

impl Warped {
    pub fn overlap(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

pub fn warp(img: &Array2<f64>, d: &DisplacementField) -> Warped {
    let (m, l) = img.dim();
    let lateral = d.lateral.as_ref();
    let mut image = Array2::zeros((m, l));
    par::for_each_row_mut(&mut image, |i, mut row| {
        for j in 0..l {
            let z = i as f64 + d.axial[[i, j]];
            let x = j as f64 + lateral.map_or(0.0, |a| a[[i, j]]);
            row[j] = sample(img, z, x);
        }
    });
    let mask = Array2::from_shape_fn((m, l), |(i, j)| {
        let z = i as f64 + d.axial[[i, j]];
        let x = j as f64 + lateral.map_or(0.0, |a| a[[i, j]]);
        (0.0..=(m - 1) as f64).contains(&z) && (0.0..=(l - 1) as f64).contains(&x)
    });
    Warped { image, mask }
}
