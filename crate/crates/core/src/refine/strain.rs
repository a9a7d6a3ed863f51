use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{DisplacementField, StrainImage};

pub const DEFAULT_STRAIN_WINDOW: usize = 43;

/// Axial strain as the least-squares slope of each column over a centred
/// window of `window_len` rows, truncated at the ends of the column.
pub fn strain(d: &DisplacementField, window_len: usize) -> Result<StrainImage> {
    strain_of(&d.axial, window_len)
}

pub fn strain_of(axial: &Array2<f64>, window_len: usize) -> Result<StrainImage> {
    if window_len < 3 || window_len % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "strain window {window_len} must be odd and >= 3"
        )));
    }
    let (m, l) = axial.dim();
    if window_len > m {
        return Err(Error::InvalidArgument(format!(
            "strain window {window_len} longer than column of {m}"
        )));
    }
    let h = (window_len - 1) / 2;
    let mut out = Array2::zeros((m, l));
    for j in 0..l {
        let col = axial.column(j);
        for i in 0..m {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(m - 1);
            let n = (hi - lo + 1) as f64;
            let xm = (lo + hi) as f64 / 2.0;
            let ym = (lo..=hi).map(|k| col[k]).sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for k in lo..=hi {
                let dx = k as f64 - xm;
                sxy += dx * (col[k] - ym);
                sxx += dx * dx;
            }
            out[[i, j]] = sxy / sxx;
        }
    }
    Ok(StrainImage {
        strain: out,
        window_len,
    })
}
