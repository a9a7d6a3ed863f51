//! Image similarity and strain quality metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Window;

/// Normalized cross correlation over the samples where `mask` is set (all
/// samples when `mask` is `None`).
pub fn ncc(a: &Array2<f64>, b: &Array2<f64>, mask: Option<&Array2<bool>>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let keep = |idx: (usize, usize)| mask.is_none_or(|m| m[idx]);
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for ((idx, &x), &y) in a.indexed_iter().zip(b.iter()) {
        if keep(idx) {
            n += 1;
            sa += x;
            sb += y;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("NCC overlap is empty".into()));
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for ((idx, &x), &y) in a.indexed_iter().zip(b.iter()) {
        if keep(idx) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("NCC of a constant image".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrCnr {
    pub snr: f64,
    pub cnr: f64,
    /// A zero variance made at least one metric infinite.
    pub saturated: bool,
}

fn window_stats(strain: &Array2<f64>, w: Window) -> (f64, f64) {
    let v = w.view(strain);
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `SNR = mean_b / std_b`, `CNR = sqrt(2 (mean_b - mean_t)² / (var_b + var_t))`,
/// with population variances.
pub fn snr_cnr(strain: &Array2<f64>, target: Window, background: Window) -> Result<SnrCnr> {
    for (name, w) in [("target", target), ("background", background)] {
        if !w.fits(strain.dim()) {
            return Err(Error::InvalidArgument(format!(
                "{name} window {w:?} does not fit a {:?} image",
                strain.dim()
            )));
        }
    }
    let (mt, vt) = window_stats(strain, target);
    let (mb, vb) = window_stats(strain, background);
    let mut saturated = false;
    let snr = if vb > 0.0 {
        mb / vb.sqrt()
    } else {
        saturated = true;
        if mb == 0.0 { 0.0 } else { f64::INFINITY.copysign(mb) }
    };
    let contrast = 2.0 * (mb - mt).powi(2);
    let cnr = if vb + vt > 0.0 {
        (contrast / (vb + vt)).sqrt()
    } else {
        saturated = true;
        if contrast == 0.0 { 0.0 } else { f64::INFINITY }
    };
    Ok(SnrCnr { snr, cnr, saturated })
}
