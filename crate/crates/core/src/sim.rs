//! Synthetic RF phantom generator with known ground-truth displacement.
//!
//! Point scatterers with Gaussian amplitudes are scattered uniformly over a
//! region slightly larger than the frame and rendered through a separable
//! Gaussian-modulated cosine PSF. The deformed frame renders the same
//! scatterers after moving each one by the imposed displacement field, so the
//! oracle satisfies `I2(x + d(x)) ~= I1(x)`.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::types::{DisplacementField, Provenance, RfFrame};

/// Separable PSF `exp(-z²/2σz² - x²/2σx²) cos(2π f z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    /// Cycles per axial sample.
    pub center_frequency: f64,
    /// Axial envelope sigma, samples.
    pub axial_sigma: f64,
    /// Lateral envelope sigma, lines.
    pub lateral_sigma: f64,
}

impl Default for Psf {
    fn default() -> Self {
        Self {
            center_frequency: 0.125,
            axial_sigma: 2.0,
            lateral_sigma: 0.8,
        }
    }
}

/// Circular inclusion; `center` is (row, line), `radius` in axial samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub center: (f64, f64),
    pub radius: f64,
    pub relative_stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize),
    /// Scatterers per (sample x line) cell.
    pub scatterer_density: f64,
    pub psf: Psf,
    pub background_stiffness: f64,
    pub inclusions: Vec<Inclusion>,
    /// Physical size of one axial sample (mm).
    pub axial_spacing: f64,
    /// Physical spacing between lines (mm).
    pub lateral_spacing: f64,
}

impl PhantomSpec {
    pub fn uniform(dims: (usize, usize)) -> Self {
        Self {
            dims,
            scatterer_density: 2.0,
            psf: Psf::default(),
            background_stiffness: 1.0,
            inclusions: Vec::new(),
            axial_spacing: 0.02,
            lateral_spacing: 0.08,
        }
    }

    pub fn with_inclusion(mut self, inclusion: Inclusion) -> Self {
        self.inclusions.push(inclusion);
        self
    }

    /// A phantom with `count` inclusions at random interior positions, radius
    /// 8–15% of the depth, stiffness ratio in [0.4, 3].
    pub fn random(dims: (usize, usize), count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1ac1);
        let mut spec = Self::uniform(dims);
        let (m, l) = (dims.0 as f64, dims.1 as f64);
        for _ in 0..count {
            let radius = rng.random_range(0.08..0.15) * m;
            let stiff: f64 = if rng.random_bool(0.5) {
                rng.random_range(1.5..3.0)
            } else {
                rng.random_range(0.4..0.7)
            };
            spec.inclusions.push(Inclusion {
                center: (rng.random_range(0.25..0.75) * m, rng.random_range(0.2..0.8) * l),
                radius,
                relative_stiffness: stiff,
            });
        }
        spec
    }

    /// Lateral line spacing measured in axial samples.
    pub fn aspect(&self) -> f64 {
        self.lateral_spacing / self.axial_spacing
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.scatterer_density <= 0.0 || !self.scatterer_density.is_finite() {
            return bad(format!("scatterer density {} must be > 0", self.scatterer_density));
        }
        if self.background_stiffness <= 0.0 {
            return bad("background stiffness must be > 0".into());
        }
        if self.psf.axial_sigma <= 0.0 || self.psf.lateral_sigma <= 0.0 {
            return bad("PSF sigmas must be > 0".into());
        }
        if self.axial_spacing <= 0.0 || self.lateral_spacing <= 0.0 {
            return bad("spacings must be > 0".into());
        }
        for inc in &self.inclusions {
            if inc.radius <= 0.0 {
                return bad(format!("inclusion radius {} must be > 0", inc.radius));
            }
            if inc.relative_stiffness <= 0.0 {
                return bad(format!(
                    "inclusion stiffness {} must be > 0",
                    inc.relative_stiffness
                ));
            }
        }
        Ok(())
    }

    /// Smooth inclusion weight in [0, 1]: 1 inside, 0 beyond 1.25 radii.
    fn inclusion_weight(&self, inc: &Inclusion, z: f64, x: f64) -> f64 {
        let dz = z - inc.center.0;
        let dx = (x - inc.center.1) * self.aspect();
        let r = (dz * dz + dx * dx).sqrt();
        let (inner, outer) = (0.75 * inc.radius, 1.25 * inc.radius);
        if r <= inner {
            1.0
        } else if r >= outer {
            0.0
        } else {
            let t = (outer - r) / (outer - inner);
            t * t * (3.0 - 2.0 * t)
        }
    }

    /// Local stiffness relative to the background.
    pub fn relative_stiffness_at(&self, z: f64, x: f64) -> f64 {
        let e = 1.0
            + self
                .inclusions
                .iter()
                .map(|inc| (inc.relative_stiffness - 1.0) * self.inclusion_weight(inc, z, x))
                .sum::<f64>();
        e.max(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformationKind {
    /// Magnitude: applied strain fraction.
    AxialCompression,
    /// Magnitude: radians, pivot at the top centre of the frame.
    InPlaneRotation,
    /// Magnitude: lines.
    LateralShift,
    /// Magnitude: decorrelation in [0, 1]; 1 is a fully independent realization.
    OutOfPlane,
}

impl DeformationKind {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            DeformationKind::AxialCompression => (0.0, 0.1),
            DeformationKind::InPlaneRotation => (-0.1, 0.1),
            DeformationKind::LateralShift => (-8.0, 8.0),
            DeformationKind::OutOfPlane => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    pub kind: DeformationKind,
    pub magnitude: f64,
    pub rng_seed: u64,
}

impl DeformationSpec {
    pub fn new(kind: DeformationKind, magnitude: f64, rng_seed: u64) -> Self {
        Self {
            kind,
            magnitude,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kind.bounds();
        if !(lo..=hi).contains(&self.magnitude) {
            return Err(Error::InvalidArgument(format!(
                "{:?} magnitude {} outside [{lo}, {hi}]",
                self.kind, self.magnitude
            )));
        }
        Ok(())
    }
}

/// Output of [`synthesize_pair`].
#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub pre: RfFrame,
    pub post: RfFrame,
    pub oracle: DisplacementField,
}

/// Displacement sampled on the frame grid extended by a margin on every side.
struct DisplacementGrid {
    row_margin: usize,
    col_margin: usize,
    axial: Array2<f64>,
    lateral: Array2<f64>,
}

impl DisplacementGrid {
    fn build(spec: &PhantomSpec, def: &DeformationSpec, row_margin: usize, col_margin: usize) -> Self {
        let (m, l) = spec.dims;
        let rows = m + 2 * row_margin;
        let cols = l + 2 * col_margin;
        let mut axial = Array2::zeros((rows, cols));
        let mut lateral = Array2::zeros((rows, cols));
        let z_of = |r: usize| r as f64 - row_margin as f64;
        let x_of = |c: usize| c as f64 - col_margin as f64;
        let mag = def.magnitude;
        match def.kind {
            DeformationKind::AxialCompression => {
                // Strain is ε scaled by the inverse local stiffness, integrated
                // down each column from the (fixed) top of the frame.
                let zero_row = row_margin;
                for c in 0..cols {
                    let x = x_of(c);
                    let strain: Vec<f64> = (0..rows)
                        .map(|r| mag / spec.relative_stiffness_at(z_of(r), x))
                        .collect();
                    for r in zero_row + 1..rows {
                        axial[[r, c]] = axial[[r - 1, c]] + 0.5 * (strain[r - 1] + strain[r]);
                    }
                    for r in (0..zero_row).rev() {
                        axial[[r, c]] = axial[[r + 1, c]] - 0.5 * (strain[r] + strain[r + 1]);
                    }
                }
            }
            DeformationKind::InPlaneRotation => {
                let aspect = spec.aspect();
                let pivot_x = (l as f64 - 1.0) / 2.0;
                let (sin, cos) = mag.sin_cos();
                for ((r, c), v) in axial.indexed_iter_mut() {
                    let z = z_of(r);
                    let xp = (x_of(c) - pivot_x) * aspect;
                    *v = xp * sin + z * cos - z;
                    lateral[[r, c]] = (xp * cos - z * sin - xp) / aspect;
                }
            }
            DeformationKind::LateralShift => lateral.fill(mag),
            DeformationKind::OutOfPlane => {}
        }
        Self {
            row_margin,
            col_margin,
            axial,
            lateral,
        }
    }

    /// Bilinear lookup at frame coordinates (clamped to the grid).
    fn at(&self, z: f64, x: f64) -> (f64, f64) {
        let (rows, cols) = self.axial.dim();
        let gz = (z + self.row_margin as f64).clamp(0.0, (rows - 1) as f64);
        let gx = (x + self.col_margin as f64).clamp(0.0, (cols - 1) as f64);
        let (r0, c0) = ((gz.floor() as usize).min(rows - 2), (gx.floor() as usize).min(cols - 2));
        let (tz, tx) = (gz - r0 as f64, gx - c0 as f64);
        let lerp = |a: &Array2<f64>| {
            let top = a[[r0, c0]] * (1.0 - tx) + a[[r0, c0 + 1]] * tx;
            let bot = a[[r0 + 1, c0]] * (1.0 - tx) + a[[r0 + 1, c0 + 1]] * tx;
            top * (1.0 - tz) + bot * tz
        };
        (lerp(&self.axial), lerp(&self.lateral))
    }

    fn frame_part(&self, a: &Array2<f64>, dims: (usize, usize)) -> Array2<f64> {
        a.slice(ndarray::s![
            self.row_margin..self.row_margin + dims.0,
            self.col_margin..self.col_margin + dims.1
        ])
        .to_owned()
    }
}

#[derive(Debug, Clone, Copy)]
struct Scatterer {
    z: f64,
    x: f64,
    amplitude: f64,
}

fn draw_scatterers(
    spec: &PhantomSpec,
    row_margin: usize,
    col_margin: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Scatterer> {
    let (m, l) = spec.dims;
    let (z0, z1) = (-(row_margin as f64), (m + row_margin) as f64);
    let (x0, x1) = (-(col_margin as f64), (l + col_margin) as f64);
    let count = (spec.scatterer_density * (z1 - z0) * (x1 - x0)).round() as usize;
    (0..count)
        .map(|_| Scatterer {
            z: rng.random_range(z0..z1),
            x: rng.random_range(x0..x1),
            amplitude: StandardNormal.sample(rng),
        })
        .collect()
}

/// Renders scatterers through the PSF. Each output line gathers scatterers
/// from nearby lateral buckets, in bucket order, so the sum is deterministic.
fn render(spec: &PhantomSpec, scatterers: &[Scatterer], col_margin: usize) -> Array2<f64> {
    let (m, l) = spec.dims;
    let psf = spec.psf;
    let z_reach = (3.5 * psf.axial_sigma).ceil() as isize;
    let x_reach = (3.5 * psf.lateral_sigma).ceil() as isize;
    let offset = col_margin as isize + x_reach + 1;
    let n_buckets = (l as isize + 2 * offset + 1) as usize;
    let mut buckets: Vec<Vec<Scatterer>> = vec![Vec::new(); n_buckets];
    for s in scatterers {
        let b = s.x.floor() as isize + offset;
        if b >= 0 && (b as usize) < n_buckets {
            buckets[b as usize].push(*s);
        }
    }
    let two_pi_f = 2.0 * std::f64::consts::PI * psf.center_frequency;
    let (iz, ix) = (
        0.5 / (psf.axial_sigma * psf.axial_sigma),
        0.5 / (psf.lateral_sigma * psf.lateral_sigma),
    );
    // The axial pulse of a scatterer is the same on every line it reaches.
    let span = (2 * z_reach + 1) as usize;
    let pulses: Vec<Vec<f64>> = par::map_slice(&buckets, |bucket| {
        let mut out = Vec::with_capacity(bucket.len() * span);
        for s in bucket {
            let centre = s.z.round() as isize;
            for k in -z_reach..=z_reach {
                let dz = (centre + k) as f64 - s.z;
                out.push(s.amplitude * (-dz * dz * iz).exp() * (two_pi_f * dz).cos());
            }
        }
        out
    });
    let columns = par::map_range(l, |j| {
        let mut col = vec![0.0; m];
        let jf = j as f64;
        let lo = j as isize - x_reach - 1 + offset;
        let hi = j as isize + x_reach + 1 + offset;
        for b in lo.max(0)..=hi.min(n_buckets as isize - 1) {
            let b = b as usize;
            for (s, pulse) in buckets[b].iter().zip(pulses[b].chunks_exact(span)) {
                let dx = jf - s.x;
                let lat = (-dx * dx * ix).exp();
                if lat < 1e-6 {
                    continue;
                }
                let first = s.z.round() as isize - z_reach;
                for (k, &v) in pulse.iter().enumerate() {
                    let i = first + k as isize;
                    if i >= 0 && (i as usize) < m {
                        col[i as usize] += lat * v;
                    }
                }
            }
        }
        col
    });
    Array2::from_shape_fn((m, l), |(i, j)| columns[j][i])
}

/// Renders a phantom pair and its ground-truth displacement.
pub fn synthesize_pair(spec: &PhantomSpec, def: &DeformationSpec) -> Result<SimulatedPair> {
    spec.validate()?;
    def.validate()?;
    let (m, l) = spec.dims;
    if m < crate::types::MIN_AXIAL_SAMPLES || l < crate::types::MIN_LINES {
        return Err(Error::InvalidArgument(format!("phantom dims {m}x{l} too small")));
    }

    let probe = DisplacementGrid::build(spec, def, 0, 0);
    let max_axial = probe.axial.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_lateral = probe.lateral.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_axial > m as f64 / 4.0 || max_lateral > l as f64 / 4.0 {
        return Err(Error::DisplacementOutOfBounds(format!(
            "max |axial| {max_axial:.2} (limit {}), max |lateral| {max_lateral:.2} (limit {})",
            m as f64 / 4.0,
            l as f64 / 4.0
        )));
    }
    let row_margin = (1.5 * max_axial + 4.0 * spec.psf.axial_sigma).ceil() as usize + 4;
    let col_margin = (1.5 * max_lateral + 4.0 * spec.psf.lateral_sigma).ceil() as usize + 2;
    let grid = DisplacementGrid::build(spec, def, row_margin, col_margin);

    let mut rng = ChaCha8Rng::seed_from_u64(def.rng_seed);
    let scatterers = draw_scatterers(spec, row_margin, col_margin, &mut rng);
    let pre = render(spec, &scatterers, col_margin);

    let post = if def.kind == DeformationKind::OutOfPlane {
        let fresh = draw_scatterers(spec, row_margin, col_margin, &mut rng);
        let other = render(spec, &fresh, col_margin);
        let keep = (1.0 - def.magnitude * def.magnitude).max(0.0).sqrt();
        &pre * keep + &other * def.magnitude
    } else {
        let moved: Vec<Scatterer> = scatterers
            .iter()
            .map(|s| {
                let (uz, ux) = grid.at(s.z, s.x);
                Scatterer {
                    z: s.z + uz,
                    x: s.x + ux,
                    amplitude: s.amplitude,
                }
            })
            .collect();
        render(spec, &moved, col_margin)
    };

    let n = pre.len() as f64;
    let rms = (pre.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let frame = |a: Array2<f64>, id: &str| {
        RfFrame::new(a * scale, format!("{id}-{}", def.rng_seed))
            .map(|f| f.with_spacing(spec.axial_spacing, spec.lateral_spacing))
    };

    let oracle = DisplacementField::new(
        grid.frame_part(&grid.axial, spec.dims),
        Some(grid.frame_part(&grid.lateral, spec.dims)),
        Provenance::Oracle,
    )?;
    Ok(SimulatedPair {
        pre: frame(pre, "pre")?,
        post: frame(post, "post")?,
        oracle,
    })
}

/// Adds zero-mean Gaussian noise of variance `sigma2` to `round(fraction * l)`
/// randomly chosen lines. Frames are expected to be unit RMS.
pub fn inject_line_noise(frame: &RfFrame, fraction: f64, sigma2: f64, seed: u64) -> Result<RfFrame> {
    inject_line_noise_avoiding(frame, fraction, sigma2, seed, &[])
}

/// As [`inject_line_noise`], never touching the lines listed in `avoid`.
pub fn inject_line_noise_avoiding(
    frame: &RfFrame,
    fraction: f64,
    sigma2: f64,
    seed: u64,
    avoid: &[usize],
) -> Result<RfFrame> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance {sigma2} must be >= 0")));
    }
    let l = frame.lines();
    let count = (fraction * l as f64).round() as usize;
    let eligible: Vec<usize> = (0..l).filter(|j| !avoid.contains(j)).collect();
    if count > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot perturb {count} lines with only {} eligible",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    chosen.sort_unstable();
    let noise = Normal::new(0.0, sigma2.sqrt()).expect("finite non-negative sigma");
    let mut samples = frame.samples().clone();
    for &j in &chosen {
        for v in samples.column_mut(j) {
            *v += noise.sample(&mut rng);
        }
    }
    let mut out = frame.clone();
    out = RfFrame::new(samples, out.frame_id.clone())?
        .with_spacing(out.axial_spacing, out.lateral_spacing);
    Ok(out)
}

/// The lines [`inject_line_noise_avoiding`] would perturb, for diagnostics.
pub fn differing_lines(a: &RfFrame, b: &RfFrame) -> Vec<usize> {
    (0..a.lines())
        .filter(|&j| a.line(j) != b.line(j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::ncc;

    fn small() -> PhantomSpec {
        PhantomSpec::uniform((128, 32))
    }

    #[test]
    fn zero_magnitude_is_identity() {
        for kind in [
            DeformationKind::AxialCompression,
            DeformationKind::InPlaneRotation,
            DeformationKind::LateralShift,
            DeformationKind::OutOfPlane,
        ] {
            let pair = synthesize_pair(&small(), &DeformationSpec::new(kind, 0.0, 3)).unwrap();
            assert_eq!(pair.pre.samples(), pair.post.samples(), "{kind:?}");
            assert!(pair.oracle.axial.iter().all(|&v| v == 0.0));
            assert!(pair.oracle.lateral.as_ref().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn uniform_compression_oracle_is_linear_in_depth() {
        let def = DeformationSpec::new(DeformationKind::AxialCompression, 0.02, 1);
        let pair = synthesize_pair(&small(), &def).unwrap();
        for ((i, _), v) in pair.oracle.axial.indexed_iter() {
            assert!((v - 0.02 * i as f64).abs() < 1e-6, "row {i}: {v}");
        }
    }

    #[test]
    fn soft_inclusion_raises_local_strain() {
        let spec = small().with_inclusion(Inclusion {
            center: (64.0, 16.0),
            radius: 16.0,
            relative_stiffness: 0.5,
        });
        let def = DeformationSpec::new(DeformationKind::AxialCompression, 0.02, 1);
        let pair = synthesize_pair(&spec, &def).unwrap();
        let d = &pair.oracle.axial;
        let inside = d[[66, 16]] - d[[62, 16]];
        let outside = d[[66, 2]] - d[[62, 2]];
        assert!((inside / 4.0 - 0.04).abs() < 1e-3, "{inside}");
        assert!((outside / 4.0 - 0.02).abs() < 1e-9, "{outside}");
    }

    #[test]
    fn determinism() {
        let def = DeformationSpec::new(DeformationKind::InPlaneRotation, 0.01, 9);
        let a = synthesize_pair(&small(), &def).unwrap();
        let b = synthesize_pair(&small(), &def).unwrap();
        assert_eq!(a.pre.samples(), b.pre.samples());
        assert_eq!(a.post.samples(), b.post.samples());
        assert_eq!(a.oracle, b.oracle);
    }

    #[test]
    fn frames_are_unit_rms() {
        let def = DeformationSpec::new(DeformationKind::AxialCompression, 0.01, 2);
        let pair = synthesize_pair(&small(), &def).unwrap();
        assert!((pair.pre.rms() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = small();
        spec.scatterer_density = 0.0;
        let def = DeformationSpec::new(DeformationKind::AxialCompression, 0.01, 2);
        assert!(synthesize_pair(&spec, &def).is_err());
        let spec = small().with_inclusion(Inclusion {
            center: (1.0, 1.0),
            radius: -1.0,
            relative_stiffness: 1.0,
        });
        assert!(synthesize_pair(&spec, &def).is_err());
        let def = DeformationSpec::new(DeformationKind::OutOfPlane, 1.5, 2);
        assert!(synthesize_pair(&small(), &def).is_err());
    }

    #[test]
    fn oversized_displacement_is_an_error() {
        // l / 4 = 4 lines for a 16-line frame.
        let spec = PhantomSpec::uniform((128, 16));
        let def = DeformationSpec::new(DeformationKind::LateralShift, 5.0, 1);
        assert!(matches!(
            synthesize_pair(&spec, &def),
            Err(Error::DisplacementOutOfBounds(_))
        ));
    }

    #[test]
    fn line_noise_counts() {
        let pair = synthesize_pair(
            &PhantomSpec::uniform((64, 40)),
            &DeformationSpec::new(DeformationKind::AxialCompression, 0.0, 1),
        )
        .unwrap();
        let same = inject_line_noise(&pair.pre, 0.0, 0.1225, 4).unwrap();
        assert_eq!(same.samples(), pair.pre.samples());
        let noisy = inject_line_noise(&pair.pre, 0.1, 0.1225, 4).unwrap();
        assert_eq!(differing_lines(&pair.pre, &noisy).len(), 4);
        let avoid = [0, 5, 10, 15, 20, 25, 30, 35];
        let noisy = inject_line_noise_avoiding(&pair.pre, 0.1, 0.1225, 4, &avoid).unwrap();
        let lines = differing_lines(&pair.pre, &noisy);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|j| !avoid.contains(j)));
    }

    #[test]
    fn line_noise_variance() {
        // Empirical variance increase on the perturbed lines over 10 seeds.
        let pair = synthesize_pair(
            &PhantomSpec::uniform((256, 40)),
            &DeformationSpec::new(DeformationKind::AxialCompression, 0.0, 7),
        )
        .unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..10 {
            let noisy = inject_line_noise(&pair.pre, 0.1, 0.1225, seed).unwrap();
            for j in differing_lines(&pair.pre, &noisy) {
                let diff: Vec<f64> = noisy
                    .line(j)
                    .iter()
                    .zip(pair.pre.line(j).iter())
                    .map(|(a, b)| a - b)
                    .collect();
                let mean = diff.iter().sum::<f64>() / diff.len() as f64;
                total += diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diff.len() - 1) as f64;
                count += 1;
            }
        }
        let var = total / count as f64;
        assert!((var - 0.1225).abs() <= 0.15 * 0.1225, "{var}");
    }

    #[test]
    fn full_decorrelation_kills_ncc() {
        // Measured over 20 seeded realizations: |NCC| stays well under 0.2.
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let def = DeformationSpec::new(DeformationKind::OutOfPlane, 1.0, seed);
            let pair = synthesize_pair(&small(), &def).unwrap();
            let v = ncc(pair.pre.samples(), pair.post.samples(), None).unwrap();
            worst = worst.max(v);
        }
        assert!(worst < 0.2, "{worst}");
    }
}
