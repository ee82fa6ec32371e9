//! Alternating least squares for tensor-train completion.
//!
//! Core `k` is refitted with every other core frozen. For a sample `m` with
//! `i_k = i` the model value is `L_m G_k[i] R_m`, which is linear in
//! `vec(G_k[i])` with design row `L_m ⊗ R_m` (the face-splitting product of the
//! left and right interface matrices). Slices with different `i` touch disjoint
//! samples, so they are solved independently.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::anova::AnovaModel;
use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tt::TTTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub sweeps: usize,
    /// Ridge weight λ. `None` selects `1e-8 · mean(value²)`.
    pub ridge: Option<f64>,
    pub seed: u64,
    /// Slices with fewer samples are reported as underdetermined.
    /// `None` uses the slice's unknown count `r_{k-1} · r_k`.
    pub min_slice_samples: Option<usize>,
    /// Stop once a sweep improves the training RMSE by less than this.
    pub tol: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            rank: 2,
            sweeps: 10,
            ridge: None,
            seed: 0,
            min_slice_samples: None,
            tol: 1e-9,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Parameter("ALS rank must be at least 1".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::Parameter("ALS needs at least one sweep".into()));
        }
        if let Some(l) = self.ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Parameter(format!(
                    "ridge must be finite and non-negative, got {l}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    /// 0 is the initial tensor.
    pub sweep: usize,
    pub rmse: f64,
    pub underdetermined_slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsReport {
    pub sweeps: Vec<SweepRecord>,
    pub ridge: f64,
    /// `(core, index, samples)` for every slice with fewer samples than the threshold.
    pub underdetermined: Vec<(usize, usize, usize)>,
}

impl AlsReport {
    pub fn final_rmse(&self) -> f64 {
        self.sweeps.last().map_or(f64::NAN, |s| s.rmse)
    }

    /// CSV with header `sweep,rmse,underdetermined_slices`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sweep,rmse,underdetermined_slices")?;
        for s in &self.sweeps {
            writeln!(w, "{},{:e},{}", s.sweep, s.rmse, s.underdetermined_slices)?;
        }
        Ok(())
    }
}

/// Warm start for ALS: the ANOVA tensor train padded to `rank` with `N(0, 1e-3²)` entries.
///
/// Rank 1 cannot hold the additive structure; it starts from `c0 + f_1(i_1)` times
/// all-ones cores instead.
pub fn anova_init(model: &AnovaModel, rank: usize, seed: u64) -> Result<TTTensor> {
    let (d, n) = model.effects.dim();
    if d < 2 {
        return Err(Error::Parameter(format!("ANOVA model with {d} components")));
    }
    if rank == 0 {
        return Err(Error::Parameter("rank must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1e-3).expect("valid normal");
    let base = super::anova::anova_to_tt(model)?;
    let ranks: Vec<usize> = (0..=d)
        .map(|k| if k == 0 || k == d { 1 } else { rank })
        .collect();
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let mut core =
            Array3::from_shape_simple_fn((ranks[k], n, ranks[k + 1]), || noise.sample(&mut rng));
        if rank >= 2 {
            let src = &base.cores()[k];
            let (ra, _, rb) = src.dim();
            for a in 0..ra {
                for i in 0..n {
                    for b in 0..rb {
                        core[[a, i, b]] = src[[a, i, b]];
                    }
                }
            }
        } else if k == 0 {
            for i in 0..n {
                core[[0, i, 0]] += model.c0 + model.effects[[0, i]];
            }
        } else {
            core.mapv_inplace(|v| v + 1.0);
        }
        cores.push(core);
    }
    TTTensor::new(cores)
}

struct SliceSolve {
    index: usize,
    solution: Option<Vec<f64>>,
}

/// Refines `init` by `cfg.sweeps` left-to-right ALS passes over the samples.
pub fn fit_als(
    samples: &SampleSet,
    init: &TTTensor,
    cfg: &AlsConfig,
) -> Result<(TTTensor, AlsReport)> {
    cfg.validate()?;
    let d = samples.dim();
    let n = samples.grid().n_cells();
    if init.ndim() != d || init.mode_sizes().iter().any(|&s| s != n) {
        return Err(Error::Shape(format!(
            "initial tensor modes {:?} do not match {d} components of size {n}",
            init.mode_sizes()
        )));
    }
    if init.max_rank() > cfg.rank {
        return Err(Error::Parameter(format!(
            "initial tensor rank {} exceeds configured rank {}",
            init.max_rank(),
            cfg.rank
        )));
    }
    let values = samples.values();
    let m_total = values.len();
    let ridge = cfg
        .ridge
        .unwrap_or_else(|| 1e-8 * values.iter().map(|v| v * v).sum::<f64>() / m_total as f64);
    let indices = samples.indices();

    // rows of each (core, cell) slice
    let groups: Vec<Vec<Vec<usize>>> = (0..d)
        .map(|k| {
            let mut g = vec![Vec::new(); n];
            for (m, &i) in indices.column(k).iter().enumerate() {
                g[i].push(m);
            }
            g
        })
        .collect();

    let ranks = init.ranks();
    let mut underdetermined = Vec::new();
    for k in 0..d {
        let threshold = cfg.min_slice_samples.unwrap_or(ranks[k] * ranks[k + 1]);
        for (i, rows) in groups[k].iter().enumerate() {
            if rows.len() < threshold {
                underdetermined.push((k, i, rows.len()));
            }
        }
    }
    let n_under = underdetermined.len();

    let mut tt = init.clone();
    let mut records = vec![SweepRecord {
        sweep: 0,
        rmse: rmse(&tt.eval_batch(&samples.index_batch())?, values),
        underdetermined_slices: n_under,
    }];

    for sweep in 1..=cfg.sweeps {
        // forward half-sweep over cores 0..d, moving the norm right after each solve
        let rights = right_interfaces(&tt, indices);
        let mut left = Array2::<f64>::ones((m_total, 1));
        for k in 0..d {
            update_core(&mut tt, k, &groups[k], &left, &rights[k], values, ridge)?;
            if k + 1 < d {
                orthogonalize_left(&mut tt, k);
            }
            left = advance_left(&left, &tt.cores()[k], indices, k);
        }
        // backward half-sweep over cores d-2..=0; core d-1 is already current
        orthogonalize_right(&mut tt, d - 1);
        let lefts = left_interfaces(&tt, indices);
        let mut right = advance_right(
            &Array2::<f64>::ones((m_total, 1)),
            &tt.cores()[d - 1],
            indices,
            d - 1,
        );
        for k in (0..d - 1).rev() {
            update_core(&mut tt, k, &groups[k], &lefts[k], &right, values, ridge)?;
            if k > 0 {
                orthogonalize_right(&mut tt, k);
            }
            right = advance_right(&right, &tt.cores()[k], indices, k);
        }
        let pred = right.column(0);
        let err = rmse(pred.as_slice().expect("contiguous column"), values);
        if !err.is_finite() {
            return Err(Error::Numerical(format!(
                "training RMSE became {err} in sweep {sweep}"
            )));
        }
        let prev = records.last().expect("initial record").rmse;
        records.push(SweepRecord {
            sweep,
            rmse: err,
            underdetermined_slices: n_under,
        });
        if prev - err < cfg.tol {
            break;
        }
    }
    Ok((
        tt,
        AlsReport {
            sweeps: records,
            ridge,
            underdetermined,
        },
    ))
}

fn update_core(
    tt: &mut TTTensor,
    k: usize,
    groups: &[Vec<usize>],
    left: &Array2<f64>,
    right: &Array2<f64>,
    values: &[f64],
    ridge: f64,
) -> Result<()> {
    let solves: Vec<Result<SliceSolve>> = groups
        .par_iter()
        .enumerate()
        .map(|(i, rows)| solve_slice(k, i, rows, left, right, values, ridge))
        .collect();
    let (r_l, _, r_r) = tt.cores()[k].dim();
    let core = tt.core_mut(k);
    for s in solves {
        let s = s?;
        if let Some(g) = s.solution {
            for a in 0..r_l {
                for b in 0..r_r {
                    core[[a, s.index, b]] = g[a * r_r + b];
                }
            }
        }
    }
    Ok(())
}

// Replaces core k by the Q factor of its (r_{k-1} N) x r_k unfolding and absorbs R
// into core k+1. The tensor is unchanged.
fn orthogonalize_left(tt: &mut TTTensor, k: usize) {
    let (r_l, n, r_r) = tt.cores()[k].dim();
    if r_l * n < r_r {
        return;
    }
    let core = &tt.cores()[k];
    let unf = DMatrix::from_fn(r_l * n, r_r, |row, b| core[[row / n, row % n, b]]);
    let qr = unf.qr();
    let (q, r) = (qr.q(), qr.r());
    let core = tt.core_mut(k);
    for row in 0..r_l * n {
        for b in 0..r_r {
            core[[row / n, row % n, b]] = q[(row, b)];
        }
    }
    let next = tt.cores()[k + 1].clone();
    let (_, n2, r2) = next.dim();
    let core = tt.core_mut(k + 1);
    for a in 0..r_r {
        for i in 0..n2 {
            for b in 0..r2 {
                core[[a, i, b]] = (0..r_r).map(|c| r[(a, c)] * next[[c, i, b]]).sum();
            }
        }
    }
}

// Mirror of orthogonalize_left: core k gets orthonormal rows in its r_{k-1} x (N r_k)
// unfolding and the triangular factor moves into core k-1.
fn orthogonalize_right(tt: &mut TTTensor, k: usize) {
    let (r_l, n, r_r) = tt.cores()[k].dim();
    if n * r_r < r_l {
        return;
    }
    let core = &tt.cores()[k];
    let unf_t = DMatrix::from_fn(n * r_r, r_l, |col, a| core[[a, col / r_r, col % r_r]]);
    let qr = unf_t.qr();
    let (q, r) = (qr.q(), qr.r());
    let core = tt.core_mut(k);
    for a in 0..r_l {
        for col in 0..n * r_r {
            core[[a, col / r_r, col % r_r]] = q[(col, a)];
        }
    }
    let prev = tt.cores()[k - 1].clone();
    let (r0, n0, _) = prev.dim();
    let core = tt.core_mut(k - 1);
    for a in 0..r0 {
        for i in 0..n0 {
            for b in 0..r_l {
                core[[a, i, b]] = (0..r_l).map(|c| prev[[a, i, c]] * r[(b, c)]).sum();
            }
        }
    }
}

fn rmse(pred: &[f64], values: &[f64]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(values)
        .map(|(p, v)| (p - v) * (p - v))
        .sum();
    (s / values.len() as f64).sqrt()
}

// rights[k] is M x r_{k+1} (rank leaving core k): product of cores k+1..d at each sample's indices.
fn right_interfaces(tt: &TTTensor, indices: &Array2<usize>) -> Vec<Array2<f64>> {
    let d = tt.ndim();
    let mut rights = vec![Array2::<f64>::ones((indices.nrows(), 1)); d];
    for k in (0..d - 1).rev() {
        rights[k] = advance_right(&rights[k + 1], &tt.cores()[k + 1], indices, k + 1);
    }
    rights
}

// lefts[k] is M x r_k (rank entering core k): product of cores 0..k-1 at each sample's indices.
fn left_interfaces(tt: &TTTensor, indices: &Array2<usize>) -> Vec<Array2<f64>> {
    let d = tt.ndim();
    let mut lefts = vec![Array2::<f64>::ones((indices.nrows(), 1))];
    for k in 0..d - 1 {
        let next = advance_left(&lefts[k], &tt.cores()[k], indices, k);
        lefts.push(next);
    }
    lefts
}

// extends a right interface (M x r_k) through core k to M x r_{k-1}
fn advance_right(
    right: &Array2<f64>,
    core: &Array3<f64>,
    indices: &Array2<usize>,
    k: usize,
) -> Array2<f64> {
    let r_l = core.shape()[0];
    let mut out = Array2::<f64>::zeros((right.nrows(), r_l));
    for (m, mut row) in out.outer_iter_mut().enumerate() {
        let slice = core.index_axis(Axis(1), indices[[m, k]]);
        let r = right.row(m);
        for (a, o) in row.iter_mut().enumerate() {
            *o = slice.row(a).dot(&r);
        }
    }
    out
}

fn advance_left(
    left: &Array2<f64>,
    core: &Array3<f64>,
    indices: &Array2<usize>,
    k: usize,
) -> Array2<f64> {
    let r_r = core.shape()[2];
    let mut out = Array2::<f64>::zeros((left.nrows(), r_r));
    for (m, mut row) in out.outer_iter_mut().enumerate() {
        let slice = core.index_axis(Axis(1), indices[[m, k]]);
        for (a, &l) in left.row(m).iter().enumerate() {
            for (o, &g) in row.iter_mut().zip(slice.row(a)) {
                *o += l * g;
            }
        }
    }
    out
}

fn solve_slice(
    k: usize,
    i: usize,
    rows: &[usize],
    left: &Array2<f64>,
    right: &Array2<f64>,
    values: &[f64],
    ridge: f64,
) -> Result<SliceSolve> {
    let (r_l, r_r) = (left.ncols(), right.ncols());
    let p = r_l * r_r;
    if rows.is_empty() {
        if ridge == 0.0 {
            return Err(Error::Underdetermined {
                core: k,
                index: i,
                samples: 0,
                unknowns: p,
            });
        }
        // nothing observed: keep the current slice
        return Ok(SliceSolve {
            index: i,
            solution: None,
        });
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for &m in rows {
        let l = left.row(m);
        let r = right.row(m);
        for a in 0..r_l {
            for b in 0..r_r {
                row[a * r_r + b] = l[a] * r[b];
            }
        }
        let y = values[m];
        for u in 0..p {
            rhs[u] += row[u] * y;
            for v in 0..=u {
                gram[(u, v)] += row[u] * row[v];
            }
        }
    }
    for u in 0..p {
        for v in 0..u {
            gram[(v, u)] = gram[(u, v)];
        }
        gram[(u, u)] += ridge;
    }
    let g = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // rank-deficient normal equations: take the minimum-norm least-squares solution
        None => {
            let svd = gram.svd(true, true);
            let cutoff = svd.singular_values.max() * p as f64 * f64::EPSILON;
            svd.solve(&rhs, cutoff)
                .map_err(|e| Error::Numerical(format!("slice ({k}, {i}): {e}")))?
        }
    };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite solution for slice ({k}, {i})"
        )));
    }
    Ok(SliceSolve {
        index: i,
        solution: Some(g.iter().copied().collect()),
    })
}
