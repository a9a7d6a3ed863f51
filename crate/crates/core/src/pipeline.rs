//! End-to-end estimation and simulator-backed dataset generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coarse::{coarse_estimate, CoarseEstimate};
use crate::dp::{dp_all_lines, DpConfig, DEFAULT_ALPHA_DP, DEFAULT_NUM_LINES, DEFAULT_SEARCH_RANGE};
use crate::error::{Error, Result};
use crate::modes::{ModeBasis, DEFAULT_NUM_MODES};
use crate::par;
use crate::refine::{refine, strain, RefineConfig, RefineOutcome, DEFAULT_STRAIN_WINDOW};
use crate::select::{label_pair, LabeledInstance};
use crate::sim::{synthesize_pair, DeformationKind, DeformationSpec, PhantomSpec, SimulatedPair};
use crate::types::{DisplacementField, RfFrame, StrainImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub num_modes: usize,
    pub num_lines: usize,
    pub alpha_dp: f64,
    pub search_range: usize,
    pub refine: RefineConfig,
    pub strain_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_modes: DEFAULT_NUM_MODES,
            num_lines: DEFAULT_NUM_LINES,
            alpha_dp: DEFAULT_ALPHA_DP,
            search_range: DEFAULT_SEARCH_RANGE,
            refine: RefineConfig::phantom(),
            strain_window: DEFAULT_STRAIN_WINDOW,
        }
    }
}

impl PipelineConfig {
    /// DP settings for a frame with `l` lines.
    pub fn dp(&self, l: usize) -> DpConfig {
        DpConfig::equidistant(l, self.num_lines)
            .with_alpha(self.alpha_dp)
            .with_search_range(self.search_range)
    }

    /// Strain window clipped to an odd length that fits an `m`-sample column.
    pub fn strain_window_for(&self, m: usize) -> usize {
        let w = self.strain_window.min(m);
        if w % 2 == 0 {
            w - 1
        } else {
            w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dp,
    Coarse,
    Refined,
    Strain,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub coarse: CoarseEstimate,
    pub refined: RefineOutcome,
    pub strain: StrainImage,
}

/// Sparse DP, mode fit, refinement and strain.
pub fn estimate(basis: &ModeBasis, pre: &RfFrame, post: &RfFrame, cfg: &PipelineConfig) -> Result<Estimate> {
    let coarse = coarse_estimate(basis, pre, post, &cfg.dp(pre.lines()))?;
    let refined = refine(pre, post, &coarse.field, &cfg.refine)?;
    let strain = strain(&refined.field, cfg.strain_window_for(pre.rows()))?;
    Ok(Estimate {
        coarse,
        refined,
        strain,
    })
}

#[derive(Debug, Clone)]
pub struct DenseEstimate {
    pub dp: DisplacementField,
    pub refined: RefineOutcome,
    pub strain: StrainImage,
}

/// Baseline: DP on every line as the refinement initialization.
pub fn estimate_dense(pre: &RfFrame, post: &RfFrame, cfg: &PipelineConfig) -> Result<DenseEstimate> {
    let dp = dp_all_lines(pre, post, &cfg.dp(pre.lines()))?;
    let refined = refine(pre, post, &dp, &cfg.refine)?;
    let strain = strain(&refined.field, cfg.strain_window_for(pre.rows()))?;
    Ok(DenseEstimate { dp, refined, strain })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Simulator ground truth.
    Oracle,
    /// Dense DP followed by refinement, as a real acquisition would provide.
    Refined,
}

/// Ranges for random in-plane deformations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InPlaneRanges {
    pub max_compression: f64,
    pub max_rotation: f64,
    pub max_inclusions: usize,
}

impl Default for InPlaneRanges {
    fn default() -> Self {
        Self {
            max_compression: 0.03,
            max_rotation: 0.015,
            max_inclusions: 2,
        }
    }
}

impl InPlaneRanges {
    /// Compression or rotation with equal probability, on a random phantom.
    pub fn draw(&self, dims: (usize, usize), rng: &mut ChaCha8Rng) -> (PhantomSpec, DeformationSpec) {
        let phantom = PhantomSpec::random(dims, rng.random_range(0..=self.max_inclusions), rng.random());
        let def = if rng.random_bool(0.5) {
            DeformationSpec::new(
                DeformationKind::AxialCompression,
                rng.random_range(0.0..=self.max_compression),
                rng.random(),
            )
        } else {
            DeformationSpec::new(
                DeformationKind::InPlaneRotation,
                rng.random_range(-self.max_rotation..=self.max_rotation),
                rng.random(),
            )
        };
        (phantom, def)
    }
}

/// Per-instance seeds derived from one master seed.
fn seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

/// Axial displacement fields for learning modes.
pub fn training_corpus(
    dims: (usize, usize),
    count: usize,
    seed: u64,
    ranges: &InPlaneRanges,
    source: CorpusSource,
    cfg: &PipelineConfig,
) -> Result<Vec<DisplacementField>> {
    par::map_slice(&seeds(seed, count), |&s| -> Result<DisplacementField> {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (phantom, def) = ranges.draw(dims, &mut rng);
        let pair = synthesize_pair(&phantom, &def)?;
        match source {
            CorpusSource::Oracle => Ok(pair.oracle),
            CorpusSource::Refined => Ok(estimate_dense(&pair.pre, &pair.post, cfg)?.refined.field),
        }
    })
    .into_iter()
    .collect()
}

/// Mix of in-plane and out-of-plane pairs for classifier data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMix {
    pub in_plane: InPlaneRanges,
    /// Fraction of pairs with in-plane motion only.
    pub in_plane_fraction: f64,
    /// Fraction of pairs with moderate decorrelation (near the threshold).
    pub boundary_fraction: f64,
    pub boundary_range: (f64, f64),
    pub out_of_plane_range: (f64, f64),
}

impl Default for DatasetMix {
    fn default() -> Self {
        Self {
            in_plane: InPlaneRanges::default(),
            in_plane_fraction: 0.5,
            boundary_fraction: 0.1,
            boundary_range: (0.3, 0.6),
            out_of_plane_range: (0.6, 1.0),
        }
    }
}

impl DatasetMix {
    pub fn draw(&self, dims: (usize, usize), rng: &mut ChaCha8Rng) -> (PhantomSpec, DeformationSpec) {
        let u: f64 = rng.random();
        if u < self.in_plane_fraction {
            return self.in_plane.draw(dims, rng);
        }
        let (lo, hi) = if u < self.in_plane_fraction + self.boundary_fraction {
            self.boundary_range
        } else {
            self.out_of_plane_range
        };
        let phantom = PhantomSpec::random(dims, rng.random_range(0..=self.in_plane.max_inclusions), rng.random());
        let def = DeformationSpec::new(DeformationKind::OutOfPlane, rng.random_range(lo..=hi), rng.random());
        (phantom, def)
    }
}

/// One labelled pair and the deformation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub deformation: DeformationSpec,
    pub instance: LabeledInstance,
}

/// Simulates and labels `count` pairs. Pairs whose estimation fails are
/// dropped; the number dropped is returned alongside.
pub fn labelled_dataset(
    basis: &ModeBasis,
    dims: (usize, usize),
    count: usize,
    seed: u64,
    mix: &DatasetMix,
    cfg: &PipelineConfig,
) -> Result<(Vec<DatasetEntry>, usize)> {
    if basis.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: basis.dims(),
            got: dims,
        });
    }
    let dp_cfg = cfg.dp(dims.1);
    let results = par::map_slice(&seeds(seed, count), |&s| -> Result<DatasetEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (phantom, def) = mix.draw(dims, &mut rng);
        let SimulatedPair { pre, post, .. } = synthesize_pair(&phantom, &def)?;
        let instance = label_pair(&pre, &post, basis, &dp_cfg, &cfg.refine)?;
        Ok(DatasetEntry {
            deformation: def,
            instance,
        })
    });
    let total = results.len();
    let kept: Vec<DatasetEntry> = results.into_iter().filter_map(|r| r.ok()).collect();
    let dropped = total - kept.len();
    Ok((kept, dropped))
}
