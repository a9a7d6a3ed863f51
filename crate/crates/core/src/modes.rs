//! Principal displacement modes learned from a corpus of axial fields.
//!
//! The corpus covariance `(1/n) X' X'^T` is never formed; its leading
//! eigenvectors come from the `n x n` Gram matrix of the centred snapshots.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{read_raster_f64, write_raster_f64};
use crate::types::{DisplacementField, WeightVector};

pub const DEFAULT_NUM_MODES: usize = 12;
pub const MANIFEST_FILE: &str = "modes.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    /// One unit-norm mode per row, each of length `m * l` (row-major field).
    modes: Array2<f64>,
    mean: Array1<f64>,
    eigenvalues: Vec<f64>,
    explained_variance_ratio: f64,
    dims: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesManifest {
    pub n_modes: usize,
    pub m: usize,
    pub l: usize,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: f64,
}

impl ModeBasis {
    /// Assembles a basis from explicit parts, orthonormalizing the modes.
    pub fn from_parts(
        modes: Array2<f64>,
        mean: Array1<f64>,
        eigenvalues: Vec<f64>,
        explained_variance_ratio: f64,
        dims: (usize, usize),
    ) -> Result<Self> {
        let d = dims.0 * dims.1;
        if modes.ncols() != d || mean.len() != d || eigenvalues.len() != modes.nrows() {
            return Err(Error::InvalidArgument(format!(
                "basis parts disagree: {} modes of length {}, mean {}, {} eigenvalues, dims {dims:?}",
                modes.nrows(),
                modes.ncols(),
                mean.len(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) || eigenvalues.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("eigenvalues must be non-negative and descending".into()));
        }
        let mut modes = modes;
        orthonormalize(&mut modes)?;
        Ok(Self {
            modes,
            mean,
            eigenvalues,
            explained_variance_ratio,
            dims,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        self.explained_variance_ratio
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn modes(&self) -> &Array2<f64> {
        &self.modes
    }

    /// Value of mode `n` at `(row, line)`.
    pub fn mode_at(&self, n: usize, row: usize, line: usize) -> f64 {
        self.modes[[n, row * self.dims.1 + line]]
    }

    pub fn mean_at(&self, row: usize, line: usize) -> f64 {
        self.mean[row * self.dims.1 + line]
    }

    pub fn mode_field(&self, n: usize) -> Array2<f64> {
        to_field(self.modes.row(n).to_owned(), self.dims)
    }

    pub fn mean_field(&self) -> Array2<f64> {
        to_field(self.mean.clone(), self.dims)
    }

    /// The leading `n` modes. Explained variance is rescaled accordingly.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_modes() {
            return Err(Error::RankTooLow {
                requested: n,
                rank: self.n_modes(),
            });
        }
        let kept: f64 = self.eigenvalues[..n].iter().sum();
        let all: f64 = self.eigenvalues.iter().sum();
        let ratio = if all > 0.0 {
            self.explained_variance_ratio * kept / all
        } else {
            0.0
        };
        Ok(Self {
            modes: self.modes.slice(ndarray::s![..n, ..]).to_owned(),
            mean: self.mean.clone(),
            eigenvalues: self.eigenvalues[..n].to_vec(),
            explained_variance_ratio: ratio,
            dims: self.dims,
        })
    }

    fn check_dims(&self, got: (usize, usize)) -> Result<()> {
        if got != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got,
            });
        }
        Ok(())
    }

    /// Mode dot products of `x` with no mean removed.
    pub fn coefficients(&self, x: &Array1<f64>) -> Vec<f64> {
        let xs = x.as_slice().expect("contiguous");
        (0..self.n_modes())
            .map(|n| par::dot(self.modes.row(n).as_slice().expect("contiguous"), xs))
            .collect()
    }

    /// `Σ w_n b_n`, without the mean.
    pub fn combine(&self, w: &[f64]) -> Result<Array1<f64>> {
        if w.len() != self.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights, got {}",
                self.n_modes(),
                w.len()
            )));
        }
        Ok(self.modes.t().dot(&Array1::from(w.to_vec())))
    }

    /// Least-squares weights of `field - mean` on the modes.
    pub fn project(&self, field: &ArrayView2<'_, f64>) -> Result<WeightVector> {
        self.check_dims(field.dim())?;
        let centred = flatten(field) - &self.mean;
        let w = self.coefficients(&centred);
        let fit = self.combine(&w)?;
        let residual_norm = (&centred - &fit).mapv(|v| v * v).sum().sqrt();
        Ok(WeightVector { w, residual_norm })
    }

    /// `mean + Σ w_n b_n` as an `m x l` field.
    pub fn reconstruct(&self, w: &[f64]) -> Result<Array2<f64>> {
        Ok(to_field(self.combine(w)? + &self.mean, self.dims))
    }

    pub fn manifest(&self) -> ModesManifest {
        ModesManifest {
            n_modes: self.n_modes(),
            m: self.dims.0,
            l: self.dims.1,
            eigenvalues: self.eigenvalues.clone(),
            explained_variance_ratio: self.explained_variance_ratio,
        }
    }

    /// Writes `modes.json`, `mean.elas` and `mode_NNN.elas` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        write_raster_f64(dir.join("mean.elas"), &self.mean_field())?;
        for n in 0..self.n_modes() {
            write_raster_f64(dir.join(mode_file(n)), &self.mode_field(n))?;
        }
        Ok(())
    }

    /// Reads a basis written by [`ModeBasis::save`]. Modes are stored as
    /// `f32`, so they are re-orthonormalized in `f64` after loading.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModesManifest = serde_json::from_str(&text)?;
        let dims = (manifest.m, manifest.l);
        let read = |name: String| -> Result<Array1<f64>> {
            let a = read_raster_f64(dir.join(name))?;
            if a.dim() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: a.dim(),
                });
            }
            Ok(flatten(&a.view()))
        };
        let mean = read("mean.elas".into())?;
        let mut modes = Array2::zeros((manifest.n_modes, dims.0 * dims.1));
        for n in 0..manifest.n_modes {
            modes.row_mut(n).assign(&read(mode_file(n))?);
        }
        Self::from_parts(
            modes,
            mean,
            manifest.eigenvalues,
            manifest.explained_variance_ratio,
            dims,
        )
    }
}

fn mode_file(n: usize) -> String {
    format!("mode_{n:03}.elas")
}

pub(crate) fn flatten(a: &ArrayView2<'_, f64>) -> Array1<f64> {
    Array1::from_iter(a.iter().copied())
}

fn to_field(v: Array1<f64>, dims: (usize, usize)) -> Array2<f64> {
    v.into_shape_with_order(dims).expect("length matches dims")
}

/// Modified Gram-Schmidt on the rows, then the sign convention.
fn orthonormalize(modes: &mut Array2<f64>) -> Result<()> {
    for n in 0..modes.nrows() {
        for k in 0..n {
            let proj = modes.row(k).dot(&modes.row(n));
            let prev = modes.row(k).to_owned();
            modes.row_mut(n).scaled_add(-proj, &prev);
        }
        let norm = modes.row(n).dot(&modes.row(n)).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(format!("mode {n} is degenerate")));
        }
        modes.row_mut(n).mapv_inplace(|v| v / norm);
        fix_sign(modes.row_mut(n));
    }
    Ok(())
}

/// Flips a mode so its largest-magnitude entry is positive.
fn fix_sign(mut row: ndarray::ArrayViewMut1<'_, f64>) {
    let mut best = 0.0f64;
    for &v in row.iter() {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        row.mapv_inplace(|v| -v);
    }
}

/// Learns `n_modes` modes from the axial components of `fields`.
pub fn learn_modes(fields: &[DisplacementField], n_modes: usize) -> Result<ModeBasis> {
    let views: Vec<ArrayView2<'_, f64>> = fields.iter().map(|f| f.axial.view()).collect();
    learn_modes_from_arrays(&views, n_modes)
}

pub fn learn_modes_from_arrays(fields: &[ArrayView2<'_, f64>], n_modes: usize) -> Result<ModeBasis> {
    if n_modes == 0 {
        return Err(Error::InvalidArgument("need at least one mode".into()));
    }
    if fields.len() < n_modes + 1 {
        return Err(Error::InsufficientCorpus {
            needed: n_modes + 1,
            got: fields.len(),
        });
    }
    let dims = fields[0].dim();
    if let Some(bad) = fields.iter().find(|f| f.dim() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            got: bad.dim(),
        });
    }
    let n = fields.len();
    let d = dims.0 * dims.1;

    let mut snapshots = Array2::<f64>::zeros((n, d));
    for (k, f) in fields.iter().enumerate() {
        snapshots.row_mut(k).assign(&flatten(f));
    }
    let mean = snapshots.mean_axis(ndarray::Axis(0)).expect("non-empty corpus");
    snapshots -= &mean;

    let gram_rows = par::map_range(n, |a| {
        let ra = snapshots.row(a);
        (0..=a)
            .map(|b| ra.dot(&snapshots.row(b)) / n as f64)
            .collect::<Vec<f64>>()
    });
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for (a, row) in gram_rows.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = spectrum[0];
    let rank = spectrum.iter().filter(|&&v| v > top * 1e-10 && v > 0.0).count();
    if n_modes > rank {
        return Err(Error::RankTooLow {
            requested: n_modes,
            rank,
        });
    }
    let total: f64 = spectrum.iter().sum();
    let kept: f64 = spectrum[..n_modes].iter().sum();

    let mut modes = Array2::<f64>::zeros((n_modes, d));
    for (k, &idx) in order[..n_modes].iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let coeffs = Array1::from_iter(v.iter().copied());
        let mode = snapshots.t().dot(&coeffs) / (n as f64 * spectrum[k]).sqrt();
        modes.row_mut(k).assign(&mode);
    }
    ModeBasis::from_parts(modes, mean, spectrum[..n_modes].to_vec(), kept / total, dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Provenance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(a: Array2<f64>) -> DisplacementField {
        DisplacementField::new(a, None, Provenance::Refined).unwrap()
    }

    fn random_corpus(seed: u64, n: usize, dims: (usize, usize)) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (a, b, c) = (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.1..0.1),
                );
                Array2::from_shape_fn(dims, |(i, j)| {
                    a * i as f64 + b * (j as f64) * (i as f64) * 0.1 + c * rng.random_range(-1.0..1.0)
                })
            })
            .collect()
    }

    fn check_invariants(basis: &ModeBasis) {
        let b = basis.modes();
        for i in 0..b.nrows() {
            assert!((b.row(i).dot(&b.row(i)).sqrt() - 1.0).abs() <= 1e-9);
            for j in 0..i {
                assert!(b.row(i).dot(&b.row(j)).abs() <= 1e-8);
            }
        }
        assert!(basis.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_one_corpus() {
        let template = Array2::from_shape_fn((8, 6), |(i, j)| (i as f64 + 1.0) * (j as f64 - 2.5));
        let fields: Vec<_> = (0..20).map(|k| field(&template * (k as f64 - 7.3))).collect();
        let basis = learn_modes(&fields, 1).unwrap();
        assert!((basis.explained_variance_ratio() - 1.0).abs() < 1e-9);
        let t = flatten(&template.view());
        let t = &t / t.dot(&t).sqrt();
        let cos = basis.modes().row(0).dot(&t);
        assert!((cos.abs() - 1.0).abs() < 1e-9);
        assert!(matches!(learn_modes(&fields, 2), Err(Error::RankTooLow { rank: 1, .. })));
    }

    #[test]
    fn two_equal_energy_patterns_span_their_plane() {
        let dims = (8, 8);
        let p1 = Array2::from_shape_fn(dims, |(i, _)| if i < 4 { 1.0 } else { -1.0 });
        let p2 = Array2::from_shape_fn(dims, |(_, j)| if j < 4 { 1.0 } else { -1.0 });
        let fields: Vec<_> = [1.0, -1.0, 1.0, -1.0]
            .iter()
            .enumerate()
            .map(|(k, &s)| field(if k < 2 { &p1 * s } else { &p2 * s }))
            .collect();
        let basis = learn_modes(&fields, 2).unwrap();
        let ev = basis.eigenvalues();
        assert!((ev[0] - ev[1]).abs() < 1e-9 * ev[0]);
        // Projector onto span{p1, p2} built directly from the patterns.
        let (u1, u2) = (flatten(&p1.view()) / 8.0, flatten(&p2.view()) / 8.0);
        let d = 64;
        let direct = Array2::from_shape_fn((d, d), |(a, b)| u1[a] * u1[b] + u2[a] * u2[b]);
        let b = basis.modes();
        let learned = b.t().dot(b);
        let worst = (&direct - &learned).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn projection_examples() {
        let corpus = random_corpus(3, 30, (10, 6));
        let views: Vec<_> = corpus.iter().map(|a| a.view()).collect();
        let basis = learn_modes_from_arrays(&views, 3).unwrap();
        check_invariants(&basis);
        let mean = basis.mean_field();
        // mean + b_3 projects to e_3.
        let x = &mean + &basis.mode_field(2);
        let w = basis.project(&x.view()).unwrap();
        for (k, v) in w.w.iter().enumerate() {
            let e = if k == 2 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
        // A direction orthogonal to all modes projects to zero.
        let mut r = Array1::from_shape_fn(60, |k| ((k * 7919) % 13) as f64 - 6.0);
        for n in 0..3 {
            let c = basis.modes().row(n).dot(&r);
            r.scaled_add(-c, &basis.modes().row(n));
        }
        let x = &mean + &to_field(r, (10, 6));
        let w = basis.project(&x.view()).unwrap();
        assert!(w.w.iter().all(|v| v.abs() < 1e-12));
        let rec = basis.reconstruct(&w.w).unwrap();
        assert!((&rec - &mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pythagoras() {
        let corpus = random_corpus(4, 25, (9, 7));
        let views: Vec<_> = corpus.iter().map(|a| a.view()).collect();
        let basis = learn_modes_from_arrays(&views, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Array2::from_shape_fn((9, 7), |_| rng.random_range(-5.0..5.0));
        let w = basis.project(&x.view()).unwrap();
        let centred = &x - &basis.mean_field();
        let fit = &basis.reconstruct(&w.w).unwrap() - &basis.mean_field();
        let lhs = (&centred - &fit).mapv(|v| v * v).sum() + fit.mapv(|v| v * v).sum();
        let rhs = centred.mapv(|v| v * v).sum();
        assert!(((lhs - rhs) / rhs).abs() < 1e-8);
        assert!((w.residual_norm.powi(2) - (&centred - &fit).mapv(|v| v * v).sum()).abs() < 1e-9 * rhs);
    }

    #[test]
    fn corpus_errors() {
        let corpus = random_corpus(5, 3, (4, 4));
        let views: Vec<_> = corpus.iter().map(|a| a.view()).collect();
        assert!(matches!(
            learn_modes_from_arrays(&views, 3),
            Err(Error::InsufficientCorpus { needed: 4, got: 3 })
        ));
        let odd = Array2::zeros((4, 5));
        let mut views = views;
        views.push(odd.view());
        assert!(matches!(
            learn_modes_from_arrays(&views, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn save_load_keeps_invariants() {
        let corpus = random_corpus(6, 40, (12, 8));
        let views: Vec<_> = corpus.iter().map(|a| a.view()).collect();
        let basis = learn_modes_from_arrays(&views, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        basis.save(dir.path()).unwrap();
        let back = ModeBasis::load(dir.path()).unwrap();
        check_invariants(&back);
        assert_eq!(back.manifest(), basis.manifest());
        let worst = (back.modes() - basis.modes()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scale_equivariance(seed in 0u64..1000, s in 0.1f64..10.0) {
            let corpus = random_corpus(seed, 12, (6, 5));
            let scaled: Vec<_> = corpus.iter().map(|a| a * s).collect();
            let va: Vec<_> = corpus.iter().map(|a| a.view()).collect();
            let vb: Vec<_> = scaled.iter().map(|a| a.view()).collect();
            let a = learn_modes_from_arrays(&va, 2).unwrap();
            let b = learn_modes_from_arrays(&vb, 2).unwrap();
            check_invariants(&a);
            for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
                prop_assert!((x * s * s - y).abs() <= 1e-8 * y.abs().max(1e-300));
            }
            for n in 0..2 {
                let cos = a.modes().row(n).dot(&b.modes().row(n));
                prop_assert!((cos - 1.0).abs() < 1e-8, "cos {}", cos);
            }
        }
    }
}
