//! Integer time-delay estimation by dynamic programming along RF lines.
//!
//! Each line is treated as a chain: sample `i` takes a displacement label
//! `d(i)` in `[-R, R]`; the path minimizes squared amplitude differences plus
//! `alpha * (d(i) - d(i-1))^2`. Only `p` lines are processed for the sparse
//! estimate; the integer staircase is then smoothed into a piecewise-linear
//! signal through run midpoints.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::types::{normalize, DisplacementField, Provenance, RfFrame};

pub const DEFAULT_ALPHA_DP: f64 = 0.2;
pub const DEFAULT_SEARCH_RANGE: usize = 32;
pub const DEFAULT_NUM_LINES: usize = 5;
pub const DEFAULT_LATERAL_SEARCH_RANGE: usize = 8;
/// Half-height of the axial window summed into each lateral cost.
const LATERAL_COST_HALF_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub alpha_dp: f64,
    pub search_range: usize,
    pub lateral_search_range: usize,
    pub lines: Vec<usize>,
}

impl DpConfig {
    /// Default weights with `p` equidistant lines of an `l`-line frame.
    pub fn equidistant(l: usize, p: usize) -> Self {
        Self {
            alpha_dp: DEFAULT_ALPHA_DP,
            search_range: DEFAULT_SEARCH_RANGE,
            lateral_search_range: DEFAULT_LATERAL_SEARCH_RANGE,
            lines: equidistant_lines(l, p),
        }
    }

    pub fn with_search_range(mut self, r: usize) -> Self {
        self.search_range = r;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha_dp = alpha;
        self
    }

    pub fn with_lines(mut self, lines: Vec<usize>) -> Self {
        self.lines = lines;
        self
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn validate(&self, dim: (usize, usize)) -> Result<()> {
        let (m, l) = dim;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.alpha_dp >= 0.0) {
            return bad(format!("alpha_dp {} must be >= 0", self.alpha_dp));
        }
        if self.search_range < 1 || self.lateral_search_range < 1 {
            return bad("search ranges must be >= 1".into());
        }
        if 4 * self.search_range >= m {
            return bad(format!(
                "search range {} must be below m/4 = {}",
                self.search_range,
                m as f64 / 4.0
            ));
        }
        if self.lines.is_empty() || self.lines.len() > l {
            return bad(format!("need 1..={l} lines, got {}", self.lines.len()));
        }
        if let Some(&j) = self.lines.iter().find(|&&j| j >= l) {
            return bad(format!("line {j} out of range for {l} lines"));
        }
        Ok(())
    }
}

/// Line `t` of `p` sits at `round((t + 0.5) * l / p)`, clear of the edges.
/// Exact halves round down so that `p == l` selects every line once.
pub fn equidistant_lines(l: usize, p: usize) -> Vec<usize> {
    (0..p)
        .map(|t| ((((t as f64 + 0.5) * l as f64 / p as f64) - 0.5).ceil().max(0.0) as usize).min(l - 1))
        .collect()
}

/// Optimal labelling of a chain with a per-node cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct DpPath {
    /// Displacement label per node.
    pub labels: Vec<i32>,
    pub cost: f64,
}

/// Minimizes `Σ costs[i, d(i)+R] + alpha Σ (d(i) - d(i-1))²` over label
/// paths, where the table has `2R + 1` columns for labels `-R..=R`.
///
/// Equal-cost predecessors resolve to the smaller jump, then the smaller
/// label; equal-cost endpoints to the smaller `|d|`, then the smaller `d`.
pub fn dp_on_costs(costs: &Array2<f64>, alpha: f64) -> DpPath {
    let (m, width) = costs.dim();
    assert!(width % 2 == 1, "cost table needs an odd number of labels");
    let r = (width / 2) as i32;
    if m == 0 {
        return DpPath {
            labels: Vec::new(),
            cost: 0.0,
        };
    }

    // Candidate predecessor offsets in tie-break order: 0, -1, +1, -2, +2, ...
    let mut offsets = vec![0i32];
    for k in 1..width as i32 {
        offsets.push(-k);
        offsets.push(k);
    }

    let mut back = vec![0u16; m * width];
    let mut prev: Vec<f64> = costs.row(0).to_vec();
    let mut cur = vec![0.0; width];
    for i in 1..m {
        let row = costs.row(i);
        let floor = prev.iter().copied().fold(f64::INFINITY, f64::min);
        for k in 0..width {
            let mut best = f64::INFINITY;
            let mut arg = k;
            for &off in &offsets {
                let jump = off as f64;
                let penalty = alpha * jump * jump;
                // Offsets come in order of |jump|, so nothing further can win.
                if floor + penalty > best {
                    break;
                }
                let kp = k as i32 + off;
                if kp < 0 || kp >= width as i32 {
                    continue;
                }
                let c = prev[kp as usize] + penalty;
                if c < best {
                    best = c;
                    arg = kp as usize;
                }
            }
            cur[k] = row[k] + best;
            back[i * width + k] = arg as u16;
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut end = 0usize;
    for k in 1..width {
        let (dk, de) = (k as i32 - r, end as i32 - r);
        let better = prev[k] < prev[end]
            || (prev[k] == prev[end] && (dk.abs(), dk) < (de.abs(), de));
        if better {
            end = k;
        }
    }
    let cost = prev[end];
    let mut labels = vec![0i32; m];
    let mut k = end;
    for i in (0..m).rev() {
        labels[i] = k as i32 - r;
        if i > 0 {
            k = back[i * width + k] as usize;
        }
    }
    DpPath { labels, cost }
}

/// Cost of a given path under the same objective as [`dp_on_costs`].
pub fn path_cost(costs: &Array2<f64>, labels: &[i32], alpha: f64) -> f64 {
    let r = (costs.ncols() / 2) as i32;
    let mut total = 0.0;
    for (i, &d) in labels.iter().enumerate() {
        if i > 0 {
            let jump = (d - labels[i - 1]) as f64;
            total += alpha * jump * jump;
        }
        total += costs[[i, (d + r) as usize]];
    }
    total
}

/// Axial data-cost table between two lines: `(a[i] - b[i + d])²`, with
/// out-of-range lookups charged the largest possible squared difference.
pub fn axial_costs(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, search_range: usize) -> Array2<f64> {
    let m = a.len();
    let r = search_range as isize;
    let max_abs = |v: ArrayView1<'_, f64>| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let penalty = (max_abs(a) + max_abs(b)).powi(2);
    Array2::from_shape_fn((m, 2 * search_range + 1), |(i, k)| {
        let j = i as isize + k as isize - r;
        if j < 0 || j >= b.len() as isize {
            penalty
        } else {
            (a[i] - b[j as usize]).powi(2)
        }
    })
}

/// Raw DP on two signals, without normalization.
pub fn dp_signals(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, search_range: usize, alpha: f64) -> DpPath {
    dp_on_costs(&axial_costs(a, b, search_range), alpha)
}

fn normalized_line(line: ArrayView1<'_, f64>) -> ndarray::Array1<f64> {
    let col = line.insert_axis(ndarray::Axis(1));
    normalize(&col).column(0).to_owned()
}

/// Integer axial displacement along one line. Both lines are scaled to zero
/// mean and unit RMS first.
pub fn dp_line(pre: &RfFrame, post: &RfFrame, line: usize, cfg: &DpConfig) -> Result<Vec<i32>> {
    pre.ensure_same_dims(post)?;
    let (m, l) = pre.dim();
    if line >= l {
        return Err(Error::InvalidArgument(format!("line {line} out of range for {l} lines")));
    }
    if 4 * cfg.search_range >= m {
        return Err(Error::InvalidArgument(format!(
            "search range {} must be below m/4",
            cfg.search_range
        )));
    }
    let a = normalized_line(pre.line(line));
    let b = normalized_line(post.line(line));
    Ok(dp_signals(a.view(), b.view(), cfg.search_range, cfg.alpha_dp).labels)
}

/// Integer lateral displacement along line `line`. The cost of lateral
/// label `k` at row `i` is the mean squared difference between a short axial
/// window of `pre` and the best axially offset window of `post` on line
/// `line + k`, offsets searched over the axial range.
fn dp_lateral_line(pre: &Array2<f64>, post: &Array2<f64>, line: usize, cfg: &DpConfig) -> Vec<i32> {
    let (m, l) = pre.dim();
    let rl = cfg.lateral_search_range as isize;
    let ra = cfg.search_range as isize;
    let width = 2 * cfg.lateral_search_range + 1;
    let max_abs = |a: &Array2<f64>| a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let penalty = (max_abs(pre) + max_abs(post)).powi(2);
    let h = LATERAL_COST_HALF_WINDOW as isize;
    let mut costs = Array2::from_elem((m, width), penalty);
    let mut sq = vec![0.0; m];
    let mut valid = vec![false; m];
    let mut prefix = vec![0.0; m + 1];
    let mut count = vec![0usize; m + 1];
    for k in 0..width {
        let jj = line as isize + k as isize - rl;
        if jj < 0 || jj >= l as isize {
            continue;
        }
        let jj = jj as usize;
        for d in -ra..=ra {
            for i in 0..m {
                let ib = i as isize + d;
                valid[i] = ib >= 0 && ib < m as isize;
                sq[i] = if valid[i] {
                    (pre[[i, line]] - post[[ib as usize, jj]]).powi(2)
                } else {
                    0.0
                };
                prefix[i + 1] = prefix[i] + sq[i];
                count[i + 1] = count[i] + valid[i] as usize;
            }
            for i in 0..m {
                let lo = (i as isize - h).max(0) as usize;
                let hi = ((i as isize + h) as usize).min(m - 1) + 1;
                let n = count[hi] - count[lo];
                if n == 0 {
                    continue;
                }
                let c = (prefix[hi] - prefix[lo]) / n as f64;
                if c < costs[[i, k]] {
                    costs[[i, k]] = c;
                }
            }
        }
    }
    dp_on_costs(&costs, cfg.alpha_dp).labels
}

/// Piecewise-linear signal through the midpoints of each run of equal
/// values, held flat beyond the first and last midpoints. Runs of length one
/// keep their value exactly.
pub fn smooth_staircase(d: &[f64]) -> Vec<f64> {
    if d.is_empty() {
        return Vec::new();
    }
    let mut anchors: Vec<(f64, f64)> = Vec::new();
    let mut start = 0usize;
    for i in 1..=d.len() {
        if i == d.len() || d[i] != d[start] {
            anchors.push(((start + i - 1) as f64 / 2.0, d[start]));
            start = i;
        }
    }
    let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
    let mut seg = 0usize;
    (0..d.len())
        .map(|i| {
            let x = i as f64;
            if x <= first.0 {
                return first.1;
            }
            if x >= last.0 {
                return last.1;
            }
            while anchors[seg + 1].0 < x {
                seg += 1;
            }
            let ((x0, y0), (x1, y1)) = (anchors[seg], anchors[seg + 1]);
            if x == x1 {
                y1
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        })
        .collect()
}

pub fn smooth_staircase_int(d: &[i32]) -> Vec<f64> {
    smooth_staircase(&d.iter().map(|&v| v as f64).collect::<Vec<_>>())
}

/// DP estimates on the selected lines.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    pub dims: (usize, usize),
    pub lines: Vec<usize>,
    /// `(row, line)` for every sample on the selected lines, line-major.
    pub coords: Vec<(usize, usize)>,
    /// Smoothed axial displacement at each coordinate.
    pub values: Vec<f64>,
    pub axial_int: Vec<Vec<i32>>,
    pub lateral_int: Vec<Vec<i32>>,
    pub lateral_smoothed: Vec<Vec<f64>>,
}

impl SparseEstimate {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

struct LineEstimate {
    axial_int: Vec<i32>,
    axial: Vec<f64>,
    lateral_int: Vec<i32>,
    lateral: Vec<f64>,
}

/// Axial DP sees only the raw line pair; lateral DP compares against the
/// frame-normalized neighbours.
fn estimate_line(
    raw: (&RfFrame, &RfFrame),
    normalized: (&Array2<f64>, &Array2<f64>),
    line: usize,
    cfg: &DpConfig,
) -> LineEstimate {
    let a = normalized_line(raw.0.line(line));
    let b = normalized_line(raw.1.line(line));
    let axial_int = dp_signals(a.view(), b.view(), cfg.search_range, cfg.alpha_dp).labels;
    let axial = smooth_staircase_int(&axial_int);
    let lateral_int = dp_lateral_line(normalized.0, normalized.1, line, cfg);
    let lateral = smooth_staircase_int(&lateral_int);
    LineEstimate {
        axial_int,
        axial,
        lateral_int,
        lateral,
    }
}

/// Runs axial and lateral DP on `cfg.lines` only.
pub fn sparse_tde(pre: &RfFrame, post: &RfFrame, cfg: &DpConfig) -> Result<SparseEstimate> {
    pre.ensure_same_dims(post)?;
    let dims = pre.dim();
    cfg.validate(dims)?;
    let (p1, p2) = (normalize(&pre.samples().view()), normalize(&post.samples().view()));
    let per_line = par::map_slice(&cfg.lines, |&j| estimate_line((pre, post), (&p1, &p2), j, cfg));

    let m = dims.0;
    let mut coords = Vec::with_capacity(m * cfg.lines.len());
    let mut values = Vec::with_capacity(m * cfg.lines.len());
    for (est, &j) in per_line.iter().zip(&cfg.lines) {
        coords.extend((0..m).map(|i| (i, j)));
        values.extend_from_slice(&est.axial);
    }
    Ok(SparseEstimate {
        dims,
        lines: cfg.lines.clone(),
        coords,
        values,
        axial_int: per_line.iter().map(|e| e.axial_int.clone()).collect(),
        lateral_int: per_line.iter().map(|e| e.lateral_int.clone()).collect(),
        lateral_smoothed: per_line.into_iter().map(|e| e.lateral).collect(),
    })
}

/// DP on every line: the dense initialization PCA-based estimation replaces.
pub fn dp_all_lines(pre: &RfFrame, post: &RfFrame, cfg: &DpConfig) -> Result<DisplacementField> {
    let all = cfg.clone().with_lines((0..pre.lines()).collect());
    let est = sparse_tde(pre, post, &all)?;
    let (m, l) = est.dims;
    let mut axial = Array2::zeros((m, l));
    let mut lateral = Array2::zeros((m, l));
    for j in 0..l {
        for i in 0..m {
            axial[[i, j]] = est.values[j * m + i];
            lateral[[i, j]] = est.lateral_smoothed[j][i];
        }
    }
    DisplacementField::new(axial, Some(lateral), Provenance::DpSparse)
}
