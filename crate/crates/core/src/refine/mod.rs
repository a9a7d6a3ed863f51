//! Regularized refinement of a coarse displacement field.
//!
//! The data term `Σ (I1(x) - I2(x + d(x)))²` is linearized around the
//! current field; with first-difference penalties on both displacement
//! components the update solves one sparse symmetric positive definite
//! system, here by block-Jacobi preconditioned conjugate gradients. Each
//! outer step is accepted only if the full cost does not increase.

mod metrics;
mod strain;
mod warp;

pub use metrics::{ncc, snr_cnr, SnrCnr};
pub use strain::{strain, strain_of, DEFAULT_STRAIN_WINDOW};
pub use warp::{sample, sample_with_gradient, warp, Warped};

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::types::{normalize, DisplacementField, Provenance, RfFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Axial derivative of axial displacement.
    pub alpha1: f64,
    /// Lateral derivative of axial displacement.
    pub alpha2: f64,
    /// Axial derivative of lateral displacement.
    pub beta1: f64,
    /// Lateral derivative of lateral displacement.
    pub beta2: f64,
    pub max_iters: usize,
    /// Stop once the mean absolute update falls below this (samples).
    pub step_tolerance: f64,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self::phantom()
    }
}

impl RefineConfig {
    pub fn phantom() -> Self {
        Self {
            alpha1: 5.0,
            alpha2: 1.0,
            beta1: 5.0,
            beta2: 1.0,
            max_iters: 10,
            step_tolerance: 0.01,
            cg_tolerance: 1e-6,
            cg_max_iters: 2000,
        }
    }

    pub fn in_vivo() -> Self {
        Self {
            alpha1: 20.0,
            beta1: 20.0,
            ..Self::phantom()
        }
    }

    pub fn with_weights(mut self, alpha1: f64, alpha2: f64, beta1: f64, beta2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha1, self.alpha2, self.beta1, self.beta2];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularization weights {w:?} must be >= 0")));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Smoothness energy `Σ wz (Δz u)² + wx (Δx u)²` over forward differences.
fn smoothness(u: &Array2<f64>, wz: f64, wx: f64) -> f64 {
    let u = u.as_standard_layout();
    let mut e = 0.0;
    for rows in u.axis_windows(Axis(0), 2) {
        let (r0, r1) = (rows.row(0), rows.row(1));
        e += wz * r0.iter().zip(r1.iter()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
    }
    for row in u.rows() {
        let row = row.as_slice().expect("standard layout");
        e += wx * row.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>();
    }
    e
}

/// Adds `(L u)` to `out`, where `u ᵀ L u` is the smoothness energy.
fn add_laplacian(out: &mut Array2<f64>, u: &Array2<f64>, wz: f64, wx: f64) {
    let (m, l) = u.dim();
    let u = u.as_standard_layout();
    let us = u.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for i in 0..m.saturating_sub(1) {
        let (upper, lower) = os[i * l..(i + 2) * l].split_at_mut(l);
        let (u0, u1) = (&us[i * l..(i + 1) * l], &us[(i + 1) * l..(i + 2) * l]);
        for j in 0..l {
            let d = wz * (u0[j] - u1[j]);
            upper[j] += d;
            lower[j] -= d;
        }
    }
    for (orow, urow) in os.chunks_exact_mut(l).zip(us.chunks_exact(l)) {
        for j in 0..l.saturating_sub(1) {
            let d = wx * (urow[j] - urow[j + 1]);
            orow[j] += d;
            orow[j + 1] -= d;
        }
    }
}

fn laplacian_diagonal(dim: (usize, usize), i: usize, j: usize, wz: f64, wx: f64) -> f64 {
    let (m, l) = dim;
    let nz = (i > 0) as u8 + (i + 1 < m) as u8;
    let nx = (j > 0) as u8 + (j + 1 < l) as u8;
    wz * nz as f64 + wx * nx as f64
}

/// The full (nonlinear) refinement cost of a field.
pub fn refine_cost(pre: &Array2<f64>, post: &Array2<f64>, axial: &Array2<f64>, lateral: &Array2<f64>, cfg: &RefineConfig) -> f64 {
    let (m, l) = pre.dim();
    let rows = par::map_range(m, |i| {
        (0..l)
            .map(|j| {
                let v = sample(post, i as f64 + axial[[i, j]], j as f64 + lateral[[i, j]]);
                (pre[[i, j]] - v).powi(2)
            })
            .sum::<f64>()
    });
    rows.into_iter().sum::<f64>()
        + smoothness(axial, cfg.alpha1, cfg.alpha2)
        + smoothness(lateral, cfg.beta1, cfg.beta2)
}

/// Quadratic model of the cost around a linearization point `d0`:
/// `Q(δ) = Σ (r - gz δa - gx δl)² + S(d0 + δ)`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    residual: Array2<f64>,
    grad_axial: Array2<f64>,
    grad_lateral: Array2<f64>,
    base_axial: Array2<f64>,
    base_lateral: Array2<f64>,
    cfg: RefineConfig,
}

impl QuadraticModel {
    pub fn linearize(pre: &Array2<f64>, post: &Array2<f64>, axial: &Array2<f64>, lateral: &Array2<f64>, cfg: &RefineConfig) -> Self {
        let dim = pre.dim();
        let mut residual = Array2::zeros(dim);
        let mut grad_axial = Array2::zeros(dim);
        let mut grad_lateral = Array2::zeros(dim);
        let samples = par::map_range(dim.0, |i| {
            (0..dim.1)
                .map(|j| sample_with_gradient(post, i as f64 + axial[[i, j]], j as f64 + lateral[[i, j]]))
                .collect::<Vec<_>>()
        });
        for (i, row) in samples.into_iter().enumerate() {
            for (j, (v, gz, gx)) in row.into_iter().enumerate() {
                residual[[i, j]] = pre[[i, j]] - v;
                grad_axial[[i, j]] = gz;
                grad_lateral[[i, j]] = gx;
            }
        }
        Self {
            residual,
            grad_axial,
            grad_lateral,
            base_axial: axial.clone(),
            base_lateral: lateral.clone(),
            cfg: *cfg,
        }
    }

    pub fn cost(&self, da: &Array2<f64>, dl: &Array2<f64>) -> f64 {
        let mut data = 0.0;
        Zip::from(&self.residual)
            .and(&self.grad_axial)
            .and(&self.grad_lateral)
            .and(da)
            .and(dl)
            .for_each(|&r, &gz, &gx, &a, &l| data += (r - gz * a - gx * l).powi(2));
        let a = &self.base_axial + da;
        let l = &self.base_lateral + dl;
        data + smoothness(&a, self.cfg.alpha1, self.cfg.alpha2) + smoothness(&l, self.cfg.beta1, self.cfg.beta2)
    }

    /// `H δ`, where the normal equations read `H δ = b`.
    pub fn apply(&self, da: &Array2<f64>, dl: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut oa = Array2::zeros(da.dim());
        let mut ol = Array2::zeros(dl.dim());
        let gz = self.grad_axial.as_slice().expect("standard layout");
        let gx = self.grad_lateral.as_slice().expect("standard layout");
        let (a, l) = (da.as_standard_layout(), dl.as_standard_layout());
        let (a, l) = (a.as_slice().expect("standard layout"), l.as_slice().expect("standard layout"));
        let (oas, ols) = (oa.as_slice_mut().expect("fresh array"), ol.as_slice_mut().expect("fresh array"));
        for k in 0..gz.len() {
            let jd = gz[k] * a[k] + gx[k] * l[k];
            oas[k] = gz[k] * jd;
            ols[k] = gx[k] * jd;
        }
        add_laplacian(&mut oa, da, self.cfg.alpha1, self.cfg.alpha2);
        add_laplacian(&mut ol, dl, self.cfg.beta1, self.cfg.beta2);
        (oa, ol)
    }

    /// `b = Jᵀ r - L d0`.
    pub fn rhs(&self) -> (Array2<f64>, Array2<f64>) {
        let mut ba = &self.grad_axial * &self.residual;
        let mut bl = &self.grad_lateral * &self.residual;
        let mut la = Array2::zeros(ba.dim());
        let mut ll = Array2::zeros(bl.dim());
        add_laplacian(&mut la, &self.base_axial, self.cfg.alpha1, self.cfg.alpha2);
        add_laplacian(&mut ll, &self.base_lateral, self.cfg.beta1, self.cfg.beta2);
        ba -= &la;
        bl -= &ll;
        (ba, bl)
    }

    /// Gradient of [`QuadraticModel::cost`]: `2 (H δ - b)`.
    pub fn gradient(&self, da: &Array2<f64>, dl: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (ha, hl) = self.apply(da, dl);
        let (ba, bl) = self.rhs();
        ((ha - ba) * 2.0, (hl - bl) * 2.0)
    }

    /// Inverse 2x2 diagonal blocks of `H`, as (aa, al, ll).
    fn preconditioner(&self) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let dim = self.residual.dim();
        let c = &self.cfg;
        let mut paa = Array2::zeros(dim);
        let mut pal = Array2::zeros(dim);
        let mut pll = Array2::zeros(dim);
        for ((i, j), &gz) in self.grad_axial.indexed_iter() {
            let gx = self.grad_lateral[[i, j]];
            let a = gz * gz + laplacian_diagonal(dim, i, j, c.alpha1, c.alpha2) + 1e-12;
            let d = gx * gx + laplacian_diagonal(dim, i, j, c.beta1, c.beta2) + 1e-12;
            let b = gz * gx;
            let det = a * d - b * b;
            paa[[i, j]] = d / det;
            pal[[i, j]] = -b / det;
            pll[[i, j]] = a / det;
        }
        (paa, pal, pll)
    }

    /// Preconditioned conjugate gradients from `δ = 0`.
    pub fn solve(&self) -> CgResult {
        let (ba, bl) = self.rhs();
        let dim = ba.dim();
        let (paa, pal, pll) = self.preconditioner();
        let (paa, pal, pll) = (paa.into_raw_vec_and_offset().0, pal.into_raw_vec_and_offset().0, pll.into_raw_vec_and_offset().0);
        let precondition = |ra: &[f64], rl: &[f64], za: &mut [f64], zl: &mut [f64]| {
            for k in 0..ra.len() {
                za[k] = paa[k] * ra[k] + pal[k] * rl[k];
                zl[k] = pal[k] * ra[k] + pll[k] * rl[k];
            }
        };
        let dot2 = |a1: &[f64], l1: &[f64], a2: &[f64], l2: &[f64]| par::dot(a1, a2) + par::dot(l1, l2);
        let n = dim.0 * dim.1;

        let mut xa = vec![0.0; n];
        let mut xl = vec![0.0; n];
        let mut ra = ba.into_raw_vec_and_offset().0;
        let mut rl = bl.into_raw_vec_and_offset().0;
        let b_norm = dot2(&ra, &rl, &ra, &rl).sqrt();
        let mut rel = if b_norm == 0.0 { 0.0 } else { 1.0 };
        let mut it = 0;
        if b_norm > 0.0 {
            let (mut za, mut zl) = (vec![0.0; n], vec![0.0; n]);
            precondition(&ra, &rl, &mut za, &mut zl);
            let mut pa = Array2::from_shape_vec(dim, za.clone()).expect("shape");
            let mut pl = Array2::from_shape_vec(dim, zl.clone()).expect("shape");
            let mut rz = dot2(&ra, &rl, &za, &zl);
            while it < self.cfg.cg_max_iters {
                let (qa, ql) = self.apply(&pa, &pl);
                let (pas, pls) = (pa.as_slice().expect("owned"), pl.as_slice().expect("owned"));
                let (qa, ql) = (qa.as_slice().expect("owned"), ql.as_slice().expect("owned"));
                let pq = dot2(pas, pls, qa, ql);
                if !(pq > 0.0) {
                    break;
                }
                let step = rz / pq;
                for k in 0..n {
                    xa[k] += step * pas[k];
                    xl[k] += step * pls[k];
                    ra[k] -= step * qa[k];
                    rl[k] -= step * ql[k];
                }
                it += 1;
                rel = dot2(&ra, &rl, &ra, &rl).sqrt() / b_norm;
                if rel < self.cfg.cg_tolerance {
                    break;
                }
                precondition(&ra, &rl, &mut za, &mut zl);
                let rz_next = dot2(&ra, &rl, &za, &zl);
                let beta = rz_next / rz;
                rz = rz_next;
                let (pas, pls) = (pa.as_slice_mut().expect("owned"), pl.as_slice_mut().expect("owned"));
                for k in 0..n {
                    pas[k] = za[k] + beta * pas[k];
                    pls[k] = zl[k] + beta * pls[k];
                }
            }
        }
        CgResult {
            axial: Array2::from_shape_vec(dim, xa).expect("shape"),
            lateral: Array2::from_shape_vec(dim, xl).expect("shape"),
            iterations: it,
            relative_residual: rel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub axial: Array2<f64>,
    pub lateral: Array2<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub field: DisplacementField,
    pub iterations: usize,
    pub converged: bool,
    /// Full cost before the first and after every accepted step.
    pub cost_history: Vec<f64>,
    /// Conjugate-gradient iterations spent on each outer step.
    pub cg_iterations: Vec<usize>,
}

/// Refines `initial` into a sub-sample axial and lateral field. Frames are
/// scaled to zero mean, unit RMS first. If `max_iters` runs out the best
/// iterate is returned with `converged == false`.
pub fn refine(pre: &RfFrame, post: &RfFrame, initial: &DisplacementField, cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    pre.ensure_same_dims(post)?;
    if initial.dim() != pre.dim() {
        return Err(Error::DimensionMismatch {
            expected: pre.dim(),
            got: initial.dim(),
        });
    }
    crate::types::check_finite(&initial.axial.view())?;
    let p1 = normalize(&pre.samples().view());
    let p2 = normalize(&post.samples().view());

    let mut axial = initial.axial.as_standard_layout().into_owned();
    let mut lateral = initial.lateral_or_zeros().as_standard_layout().into_owned();
    let mut cost = refine_cost(&p1, &p2, &axial, &lateral, cfg);
    let mut history = vec![cost];
    let mut cg_iterations = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let n = (2 * axial.len()) as f64;

    while iterations < cfg.max_iters {
        iterations += 1;
        let model = QuadraticModel::linearize(&p1, &p2, &axial, &lateral, cfg);
        let step = model.solve();
        cg_iterations.push(step.iterations);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let ta = &axial + &(&step.axial * scale);
            let tl = &lateral + &(&step.lateral * scale);
            let c = refine_cost(&p1, &p2, &ta, &tl, cfg);
            if c <= cost {
                accepted = Some((ta, tl, c));
                break;
            }
            scale *= 0.5;
        }
        let Some((ta, tl, c)) = accepted else {
            // No descent along the model step: the current field is a
            // stationary point of the full cost to working precision.
            converged = true;
            break;
        };
        let mean_change = (step.axial.iter().chain(step.lateral.iter()).map(|v| v.abs()).sum::<f64>() * scale) / n;
        axial = ta;
        lateral = tl;
        cost = c;
        history.push(c);
        if mean_change < cfg.step_tolerance {
            converged = true;
            break;
        }
    }

    Ok(RefineOutcome {
        field: DisplacementField::new(axial, Some(lateral), Provenance::Refined)?,
        iterations,
        converged,
        cost_history: history,
        cg_iterations,
    })
}
