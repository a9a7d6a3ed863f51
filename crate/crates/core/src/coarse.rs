//! Coarse displacement from sparse DP samples and the mode basis.
//!
//! The DP values on `p` lines give `K = m * p` equations in the `N` mode
//! weights; the least-squares weights reconstruct a dense axial field. The
//! lateral field is interpolated between the DP lines.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::dp::{sparse_tde, DpConfig, SparseEstimate};
use crate::error::{Error, Result};
use crate::modes::ModeBasis;
use crate::types::{DisplacementField, Provenance, RfFrame, WeightVector};

/// Relative Tikhonov floor on the normal equations.
pub const TIKHONOV_SCALE: f64 = 1e-8;

/// `A w ~= c` restricted to the sparse coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    /// `K x N`; row `t` holds every mode evaluated at `coords[t]`.
    pub a: Array2<f64>,
    /// DP values with the basis mean removed.
    pub c: Array1<f64>,
    pub coords: Vec<(usize, usize)>,
}

pub fn build_system(basis: &ModeBasis, coords: &[(usize, usize)], values: &[f64]) -> Result<SparseSystem> {
    if coords.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coordinates but {} values",
            coords.len(),
            values.len()
        )));
    }
    let (m, l) = basis.dims();
    if let Some(&(i, j)) = coords.iter().find(|&&(i, j)| i >= m || j >= l) {
        return Err(Error::InvalidArgument(format!(
            "coordinate ({i}, {j}) outside {m}x{l} basis"
        )));
    }
    let n = basis.n_modes();
    let a = Array2::from_shape_fn((coords.len(), n), |(t, k)| {
        let (i, j) = coords[t];
        basis.mode_at(k, i, j)
    });
    let c = Array1::from_iter(
        coords
            .iter()
            .zip(values)
            .map(|(&(i, j), &v)| v - basis.mean_at(i, j)),
    );
    Ok(SparseSystem {
        a,
        c,
        coords: coords.to_vec(),
    })
}

/// Ridge-floored normal equations: `(AᵀA + λI) w = Aᵀc` with
/// `λ = 1e-8 * trace(AᵀA) / N`.
pub fn solve_weights(sys: &SparseSystem) -> Result<WeightVector> {
    let (k, n) = sys.a.dim();
    if k < n {
        return Err(Error::InvalidArgument(format!(
            "underdetermined system: {k} equations for {n} weights"
        )));
    }
    let ata = sys.a.t().dot(&sys.a);
    let atc = sys.a.t().dot(&sys.c);
    let trace: f64 = ata.diag().sum();
    let lambda = TIKHONOV_SCALE * trace / n as f64;
    let mut normal = DMatrix::from_fn(n, n, |r, c| ata[[r, c]]);
    for d in 0..n {
        normal[(d, d)] += lambda;
    }
    let rhs = DVector::from_iterator(n, atc.iter().copied());
    let w: Vec<f64> = if trace > 0.0 {
        let chol = normal.cholesky().ok_or_else(|| {
            Error::InvalidArgument("normal matrix not positive definite".into())
        })?;
        chol.solve(&rhs).iter().copied().collect()
    } else {
        vec![0.0; n]
    };
    let fit = sys.a.dot(&Array1::from(w.clone()));
    let residual_norm = (&fit - &sys.c).mapv(|v| v * v).sum().sqrt();
    Ok(WeightVector { w, residual_norm })
}

#[derive(Debug, Clone)]
pub struct CoarseAxial {
    pub field: DisplacementField,
    pub weights: WeightVector,
    pub sparse: SparseEstimate,
}

/// Sparse DP, weight solve and reconstruction (mean included).
pub fn coarse_axial(basis: &ModeBasis, pre: &RfFrame, post: &RfFrame, cfg: &DpConfig) -> Result<CoarseAxial> {
    pre.ensure_same_dims(post)?;
    if pre.dim() != basis.dims() {
        return Err(Error::DimensionMismatch {
            expected: basis.dims(),
            got: pre.dim(),
        });
    }
    let sparse = sparse_tde(pre, post, cfg)?;
    let weights = solve_from_sparse(basis, &sparse)?;
    let axial = basis.reconstruct(&weights.w)?;
    Ok(CoarseAxial {
        field: DisplacementField::new(axial, None, Provenance::PcaCoarse)?,
        weights,
        sparse,
    })
}

pub fn solve_from_sparse(basis: &ModeBasis, sparse: &SparseEstimate) -> Result<WeightVector> {
    solve_weights(&build_system(basis, &sparse.coords, &sparse.values)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LateralInit {
    pub field: Array2<f64>,
    /// Set when fewer than two lines were available and the field is just
    /// the single line repeated (or zero).
    pub fallback: bool,
}

/// Lateral field interpolated linearly across lines between the DP lines,
/// held constant outside them.
pub fn coarse_lateral(dims: (usize, usize), lines: &[usize], values: &[Vec<f64>]) -> Result<LateralInit> {
    let (m, l) = dims;
    if lines.len() != values.len() {
        return Err(Error::InvalidArgument("one value vector per line required".into()));
    }
    if let Some(v) = values.iter().find(|v| v.len() != m) {
        return Err(Error::InvalidArgument(format!("line has {} samples, expected {m}", v.len())));
    }
    if let Some(&j) = lines.iter().find(|&&j| j >= l) {
        return Err(Error::InvalidArgument(format!("line {j} out of range")));
    }
    let mut known: Vec<(usize, &Vec<f64>)> = lines.iter().copied().zip(values).collect();
    known.sort_by_key(|(j, _)| *j);
    known.dedup_by_key(|(j, _)| *j);

    match known.len() {
        0 => {
            return Ok(LateralInit {
                field: Array2::zeros(dims),
                fallback: true,
            })
        }
        1 => {
            let v = known[0].1;
            return Ok(LateralInit {
                field: Array2::from_shape_fn(dims, |(i, _)| v[i]),
                fallback: true,
            });
        }
        _ => {}
    }
    let mut field = Array2::zeros(dims);
    let mut seg = 0usize;
    for j in 0..l {
        let (first, last) = (known[0], known[known.len() - 1]);
        if j <= first.0 {
            field.column_mut(j).assign(&Array1::from(first.1.clone()));
            continue;
        }
        if j >= last.0 {
            field.column_mut(j).assign(&Array1::from(last.1.clone()));
            continue;
        }
        while known[seg + 1].0 <= j {
            seg += 1;
        }
        let ((j0, v0), (j1, v1)) = (known[seg], known[seg + 1]);
        let t = (j - j0) as f64 / (j1 - j0) as f64;
        for i in 0..m {
            field[[i, j]] = v0[i] + (v1[i] - v0[i]) * t;
        }
    }
    Ok(LateralInit {
        field,
        fallback: false,
    })
}

/// Full coarse initialization: PCA axial field plus interpolated lateral.
#[derive(Debug, Clone)]
pub struct CoarseEstimate {
    pub field: DisplacementField,
    pub weights: WeightVector,
    pub sparse: SparseEstimate,
    pub lateral_fallback: bool,
}

pub fn coarse_estimate(basis: &ModeBasis, pre: &RfFrame, post: &RfFrame, cfg: &DpConfig) -> Result<CoarseEstimate> {
    let axial = coarse_axial(basis, pre, post, cfg)?;
    let lateral = coarse_lateral(pre.dim(), &axial.sparse.lines, &axial.sparse.lateral_smoothed)?;
    let field = DisplacementField::new(axial.field.axial, Some(lateral.field), Provenance::PcaCoarse)?;
    Ok(CoarseEstimate {
        field,
        weights: axial.weights,
        sparse: axial.sparse,
        lateral_fallback: lateral.fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(k: usize, n: usize, seed: u64) -> SparseSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SparseSystem {
            a: Array2::from_shape_fn((k, n), |_| rng.random_range(-1.0..1.0)),
            c: Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0)),
            coords: vec![(0, 0); k],
        }
    }

    fn constant_basis(dims: (usize, usize)) -> ModeBasis {
        let d = dims.0 * dims.1;
        let modes = Array2::from_elem((1, d), 1.0 / (d as f64).sqrt());
        ModeBasis::from_parts(modes, Array1::zeros(d), vec![1.0], 1.0, dims).unwrap()
    }

    #[test]
    fn constant_mode_gives_constant_column() {
        let basis = constant_basis((6, 4));
        let coords: Vec<_> = (0..6).map(|i| (i, 2)).collect();
        let sys = build_system(&basis, &coords, &[0.0; 6]).unwrap();
        let v = 1.0 / 24f64.sqrt();
        assert!(sys.a.iter().all(|&x| (x - v).abs() < 1e-15));
    }

    #[test]
    fn out_of_range_coordinate() {
        let basis = constant_basis((6, 4));
        assert!(build_system(&basis, &[(6, 0)], &[1.0]).is_err());
        assert!(build_system(&basis, &[(0, 4)], &[1.0]).is_err());
    }

    #[test]
    fn consistent_system_recovered() {
        let mut sys = system(40, 12, 1);
        let truth: Array1<f64> = Array1::from_iter((0..12).map(|k| k as f64 - 5.5));
        sys.c = sys.a.dot(&truth);
        let w = solve_weights(&sys).unwrap();
        for (x, y) in w.w.iter().zip(truth.iter()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn orthogonal_rhs_gives_zero_weights() {
        let mut sys = system(40, 12, 2);
        // Remove the range(A) component of c with an exact least-squares fit.
        let a = DMatrix::from_fn(40, 12, |r, c| sys.a[[r, c]]);
        let qr = a.qr();
        let q = qr.q();
        let c = DVector::from_iterator(40, sys.c.iter().copied());
        let perp = &c - &q * (q.transpose() * &c);
        sys.c = Array1::from_iter(perp.iter().copied());
        let w = solve_weights(&sys).unwrap();
        let cn = perp.norm();
        assert!(w.norm() <= 1e-6 * cn);
        assert!((w.residual_norm - cn).abs() <= 1e-9 * cn);
    }

    #[test]
    fn linear_in_rhs() {
        let sys = system(60, 12, 3);
        let w1 = solve_weights(&sys).unwrap();
        let mut scaled = sys.clone();
        scaled.c.mapv_inplace(|v| v * -3.7);
        let w2 = solve_weights(&scaled).unwrap();
        for (a, b) in w1.w.iter().zip(&w2.w) {
            assert!((a * -3.7 - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn residual_never_exceeds_rhs_norm() {
        for seed in 0..20 {
            let sys = system(30, 12, seed);
            let w = solve_weights(&sys).unwrap();
            assert!(w.residual_norm <= sys.c.dot(&sys.c).sqrt());
        }
    }

    #[test]
    fn underdetermined_rejected() {
        assert!(solve_weights(&system(5, 12, 0)).is_err());
    }

    #[test]
    fn lateral_interpolation() {
        let dims = (4, 400);
        let out = coarse_lateral(dims, &[100, 300], &[vec![0.0; 4], vec![1.0; 4]]).unwrap();
        assert!(!out.fallback);
        assert!((out.field[[2, 200]] - 0.5).abs() < 1e-15);
        assert_eq!(out.field[[0, 0]], 0.0);
        assert_eq!(out.field[[0, 399]], 1.0);
        let flat = coarse_lateral(dims, &[300, 100], &[vec![2.5; 4], vec![2.5; 4]]).unwrap();
        assert!(flat.field.iter().all(|&v| v == 2.5));
        let single = coarse_lateral(dims, &[7], &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert!(single.fallback);
        assert_eq!(single.field[[3, 399]], 4.0);
    }
}
