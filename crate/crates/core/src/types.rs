use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_AXIAL_SAMPLES: usize = 64;
pub const MIN_LINES: usize = 8;

/// One RF echo frame: `m` axial samples per line by `l` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    samples: Array2<f64>,
    pub axial_spacing: f64,
    pub lateral_spacing: f64,
    pub frame_id: String,
}

impl RfFrame {
    pub fn new(samples: Array2<f64>, frame_id: impl Into<String>) -> Result<Self> {
        let (m, l) = samples.dim();
        if m < MIN_AXIAL_SAMPLES || l < MIN_LINES {
            return Err(Error::InvalidArgument(format!(
                "frame must be at least {MIN_AXIAL_SAMPLES}x{MIN_LINES}, got {m}x{l}"
            )));
        }
        check_finite(&samples.view())?;
        Ok(Self {
            samples,
            axial_spacing: 1.0,
            lateral_spacing: 1.0,
            frame_id: frame_id.into(),
        })
    }

    pub fn with_spacing(mut self, axial: f64, lateral: f64) -> Self {
        self.axial_spacing = axial;
        self.lateral_spacing = lateral;
        self
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn dim(&self) -> (usize, usize) {
        self.samples.dim()
    }

    pub fn rows(&self) -> usize {
        self.samples.nrows()
    }

    pub fn lines(&self) -> usize {
        self.samples.ncols()
    }

    pub fn line(&self, j: usize) -> ndarray::ArrayView1<'_, f64> {
        self.samples.column(j)
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Copy scaled to zero mean and unit RMS. Constant frames only lose their mean.
    pub fn normalized(&self) -> RfFrame {
        let mut out = self.clone();
        out.samples = normalize(&self.samples.view());
        out
    }

    pub fn ensure_same_dims(&self, other: &RfFrame) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn normalize(a: &ArrayView2<'_, f64>) -> Array2<f64> {
    let n = a.len() as f64;
    let mean = a.sum() / n;
    let rms = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    a.mapv(|v| (v - mean) * scale)
}

pub(crate) fn check_finite(a: &ArrayView2<'_, f64>) -> Result<()> {
    match a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((row, col), _)) => Err(Error::NonFinite { row, col }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Oracle,
    DpSparse,
    PcaCoarse,
    Refined,
}

/// Per-sample displacement. Axial values are in samples, lateral in lines.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub axial: Array2<f64>,
    pub lateral: Option<Array2<f64>>,
    pub provenance: Provenance,
}

impl DisplacementField {
    pub fn new(
        axial: Array2<f64>,
        lateral: Option<Array2<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(lat) = &lateral {
            if lat.dim() != axial.dim() {
                return Err(Error::DimensionMismatch {
                    expected: axial.dim(),
                    got: lat.dim(),
                });
            }
        }
        Ok(Self {
            axial,
            lateral,
            provenance,
        })
    }

    pub fn zeros(dim: (usize, usize), provenance: Provenance) -> Self {
        Self {
            axial: Array2::zeros(dim),
            lateral: Some(Array2::zeros(dim)),
            provenance,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.axial.dim()
    }

    pub fn lateral_or_zeros(&self) -> Array2<f64> {
        self.lateral
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.axial.dim()))
    }

    /// Axial values in millimetres; display only.
    pub fn axial_mm(&self, axial_spacing_mm: f64) -> Array2<f64> {
        self.axial.mapv(|v| v * axial_spacing_mm)
    }
}

/// Decomposition coefficients of a displacement field on the mode basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub residual_norm: f64,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrainImage {
    pub strain: Array2<f64>,
    pub window_len: usize,
}

pub const NCC_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePairLabel {
    pub ncc: f64,
    pub suitable: bool,
}

impl FramePairLabel {
    pub fn from_ncc(ncc: f64) -> Self {
        Self::with_threshold(ncc, NCC_THRESHOLD)
    }

    pub fn with_threshold(ncc: f64, threshold: f64) -> Self {
        Self {
            ncc,
            suitable: ncc > threshold,
        }
    }
}

/// Rectangular window `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Window {
    pub fn new(row0: usize, row1: usize, col0: usize, col1: usize) -> Self {
        Self {
            row0,
            row1,
            col0,
            col1,
        }
    }

    /// The central `fraction` of a frame in both directions.
    pub fn interior(dim: (usize, usize), fraction: f64) -> Self {
        let margin = |n: usize| ((n as f64) * (1.0 - fraction) / 2.0).round() as usize;
        let (mr, mc) = (margin(dim.0), margin(dim.1));
        Self::new(mr, dim.0 - mr, mc, dim.1 - mc)
    }

    pub fn len(&self) -> usize {
        self.row1.saturating_sub(self.row0) * self.col1.saturating_sub(self.col0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, dim: (usize, usize)) -> bool {
        self.row0 < self.row1 && self.col0 < self.col1 && self.row1 <= dim.0 && self.col1 <= dim.1
    }

    pub fn view<'a>(&self, a: &'a Array2<f64>) -> ArrayView2<'a, f64> {
        a.slice(s![self.row0..self.row1, self.col0..self.col1])
    }
}

/// RMS of `a - b` over a window.
pub fn rms_difference(a: &Array2<f64>, b: &Array2<f64>, window: Window) -> f64 {
    let (va, vb) = (window.view(a), window.view(b));
    let ss: f64 = va.iter().zip(vb.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / va.len() as f64).sqrt()
}

/// Mean absolute difference over a window.
pub fn mean_abs_difference(a: &Array2<f64>, b: &Array2<f64>, window: Window) -> f64 {
    let (va, vb) = (window.view(a), window.view(b));
    va.iter().zip(vb.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / va.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_size_and_finiteness() {
        assert!(RfFrame::new(Array2::zeros((63, 8)), "a").is_err());
        assert!(RfFrame::new(Array2::zeros((64, 7)), "a").is_err());
        let mut a = Array2::zeros((64, 8));
        a[[3, 4]] = f64::NAN;
        assert!(matches!(
            RfFrame::new(a, "a"),
            Err(Error::NonFinite { row: 3, col: 4 })
        ));
    }

    #[test]
    fn normalized_has_unit_rms() {
        let a = Array2::from_shape_fn((64, 8), |(i, j)| (i as f64 * 0.3).sin() * 4.0 + j as f64);
        let f = RfFrame::new(a, "a").unwrap().normalized();
        assert!(f.samples().mean().unwrap().abs() < 1e-12);
        assert!((f.rms() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_threshold_is_strict() {
        assert!(!FramePairLabel::from_ncc(0.9).suitable);
        assert!(FramePairLabel::from_ncc(0.9000001).suitable);
    }

    #[test]
    fn interior_window() {
        let w = Window::interior((100, 50), 0.8);
        assert_eq!(w, Window::new(10, 90, 5, 45));
    }
}
