//! Rank estimation from pairwise dependency matrices.
//!
//! `C[j_r, j_c]` is the tensor averaged over every index except components
//! `k1` and `k2`, pinned to `j_r` and `j_c`. For a tensor train of rank `r`,
//! averaging a core over its mode index leaves an `r x r` matrix, so `C`
//! factors through rank-`r` bonds and `rank(C) <= r`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tt::TTTensor;

/// Count recorded for cells of a matrix computed exactly from tensor cores.
pub const EXACT_COUNT: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub k1: usize,
    pub k2: usize,
    pub c: Array2<f64>,
    /// Samples behind each cell; [`EXACT_COUNT`] for the exact core path.
    pub counts: Array2<usize>,
    /// Expected spectral norm of the sampling error in `c`; 0 for the exact core path.
    pub noise_level: f64,
}

impl PairwiseMatrix {
    pub fn transpose(&self) -> Self {
        PairwiseMatrix {
            k1: self.k2,
            k2: self.k1,
            c: self.c.t().to_owned(),
            counts: self.counts.t().to_owned(),
            noise_level: self.noise_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub normalized_cumsum: Vec<f64>,
}

fn check_pair(d: usize, k1: usize, k2: usize) -> Result<()> {
    if k1 == k2 || k1 >= d || k2 >= d {
        return Err(Error::Parameter(format!(
            "invalid component pair ({k1}, {k2}) for {d} components"
        )));
    }
    Ok(())
}

/// Exact `C` from the cores. Components are 0-based; `k1 > k2` yields the transpose.
pub fn pairwise_matrix_from_tt(t: &TTTensor, k1: usize, k2: usize) -> Result<PairwiseMatrix> {
    let d = t.ndim();
    check_pair(d, k1, k2)?;
    if k1 > k2 {
        return pairwise_matrix_from_tt(t, k2, k1).map(|p| p.transpose());
    }
    let cores = t.cores();
    let mean_core = |k: usize| cores[k].mean_axis(Axis(1)).expect("non-empty mode");
    let chain = |from: usize, to: usize, start: Array2<f64>| {
        (from..to).fold(start, |acc, k| acc.dot(&mean_core(k)))
    };

    let left = chain(0, k1, Array2::eye(1)); // 1 x r_{k1-1}
    let mid = chain(k1 + 1, k2, Array2::eye(cores[k1].shape()[2])); // r_{k1} x r_{k2-1}
    let right = (k2 + 1..d)
        .rev()
        .fold(Array2::eye(1), |acc: Array2<f64>, k| mean_core(k).dot(&acc)); // r_{k2} x 1

    let n1 = cores[k1].shape()[1];
    let n2 = cores[k2].shape()[1];
    // rows: left · G_k1[j] · mid, columns: G_k2[j] · right
    let rows: Vec<Array1<f64>> = (0..n1)
        .map(|j| {
            left.dot(&cores[k1].index_axis(Axis(1), j))
                .dot(&mid)
                .row(0)
                .to_owned()
        })
        .collect();
    let cols: Vec<Array1<f64>> = (0..n2)
        .map(|j| {
            cores[k2]
                .index_axis(Axis(1), j)
                .dot(&right)
                .column(0)
                .to_owned()
        })
        .collect();
    let c = Array2::from_shape_fn((n1, n2), |(a, b)| rows[a].dot(&cols[b]));
    Ok(PairwiseMatrix {
        k1,
        k2,
        c,
        counts: Array2::from_elem((n1, n2), EXACT_COUNT),
        noise_level: 0.0,
    })
}

/// Empirical `C`: mean of sample values in each `(i_k1, i_k2)` cell. Empty cells
/// carry count 0 and hold the global sample mean.
///
/// The cell means carry sampling error with variance `s_w² / n_ij`, where `s_w²` is
/// the pooled within-cell variance. A matrix of such errors has spectral norm about
/// `sqrt(mean variance) · (sqrt(n1) + sqrt(n2))`, recorded as `noise_level`.
pub fn pairwise_matrix_from_samples(
    samples: &SampleSet,
    k1: usize,
    k2: usize,
) -> Result<PairwiseMatrix> {
    let d = samples.dim();
    check_pair(d, k1, k2)?;
    let n = samples.grid().n_cells();
    let mut sums = Array2::<f64>::zeros((n, n));
    let mut sq_sums = Array2::<f64>::zeros((n, n));
    let mut counts = Array2::<usize>::zeros((n, n));
    for (row, &v) in samples.indices().outer_iter().zip(samples.values()) {
        let cell = [row[k1], row[k2]];
        sums[cell] += v;
        sq_sums[cell] += v * v;
        counts[cell] += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Input("no samples fall into any cell".into()));
    }
    let mean = samples.values().iter().sum::<f64>() / samples.len() as f64;
    let c = Array2::from_shape_fn((n, n), |ij| {
        if counts[ij] == 0 {
            mean
        } else {
            sums[ij] / counts[ij] as f64
        }
    });
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let dof = samples.len() - occupied;
    let within: f64 =
        ndarray::Zip::from(&sums)
            .and(&sq_sums)
            .and(&counts)
            .fold(0.0, |acc, &s, &q, &c| {
                if c > 0 {
                    acc + (q - s * s / c as f64).max(0.0)
                } else {
                    acc
                }
            });
    let noise_level = if dof == 0 {
        0.0
    } else {
        let pooled = within / dof as f64;
        let mean_var = counts
            .iter()
            .map(|&c| pooled / c.max(1) as f64)
            .sum::<f64>()
            / (n * n) as f64;
        mean_var.sqrt() * 2.0 * (n as f64).sqrt()
    };
    Ok(PairwiseMatrix {
        k1,
        k2,
        c,
        counts,
        noise_level,
    })
}

pub fn spectrum(c: &PairwiseMatrix) -> Result<Spectrum> {
    spectrum_of(&c.c)
}

/// Spectrum restricted to singular values above the matrix's `noise_level`; the top
/// one is always kept. Exact matrices keep everything.
pub fn signal_spectrum(c: &PairwiseMatrix) -> Result<Spectrum> {
    let full = spectrum_of(&c.c)?;
    if c.noise_level == 0.0 {
        return Ok(full);
    }
    let keep = full
        .singular_values
        .iter()
        .take_while(|&&s| s > c.noise_level)
        .count()
        .max(1);
    Ok(from_singular_values(full.singular_values[..keep].to_vec()))
}

pub fn spectrum_of(c: &Array2<f64>) -> Result<Spectrum> {
    if c.is_empty() {
        return Err(Error::Input("empty matrix".into()));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "pairwise matrix has non-finite entries".into(),
        ));
    }
    let m = DMatrix::from_row_iterator(c.nrows(), c.ncols(), c.iter().copied());
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(from_singular_values(sv))
}

fn from_singular_values(sv: Vec<f64>) -> Spectrum {
    let total: f64 = sv.iter().sum();
    let normalized_cumsum = if total > 0.0 {
        let mut acc = 0.0;
        sv.iter()
            .map(|s| {
                acc += s;
                acc / total
            })
            .collect()
    } else {
        vec![1.0; sv.len()]
    };
    Spectrum {
        singular_values: sv,
        normalized_cumsum,
    }
}

/// Smallest rank whose leading singular values reach `energy` in every spectrum.
pub fn suggest_rank(spectra: &[Spectrum], energy: f64) -> Result<usize> {
    if spectra.is_empty() {
        return Err(Error::Input("no spectra to rank".into()));
    }
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::Parameter(format!(
            "energy must lie in (0, 1], got {energy}"
        )));
    }
    Ok(spectra
        .iter()
        .map(|s| {
            s.normalized_cumsum
                .iter()
                .position(|&c| c >= energy)
                .map_or(s.normalized_cumsum.len(), |p| p + 1)
        })
        .max()
        .expect("non-empty"))
}

/// `count` distinct component pairs `(k1 < k2)` drawn uniformly, reproducible from `seed`.
pub fn random_pairs(d: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if d < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 components for pairs, got {d}"
        )));
    }
    let total = d * (d - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, total, count.min(total)).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|p| unrank_pair(d, p)).collect())
}

fn unrank_pair(d: usize, mut p: usize) -> (usize, usize) {
    for k1 in 0..d - 1 {
        let row = d - 1 - k1;
        if p < row {
            return (k1, k1 + 1 + p);
        }
        p -= row;
    }
    unreachable!("pair rank out of range")
}

/// Spectrum CSV with header `pair,index,sigma,cumsum`; `pair` is written as `k1-k2`.
pub fn write_spectrum_csv<W: std::io::Write>(
    mut w: W,
    rows: &[((usize, usize), Spectrum)],
) -> std::io::Result<()> {
    writeln!(w, "pair,index,sigma,cumsum")?;
    for ((k1, k2), s) in rows {
        for (i, (sig, cum)) in s
            .singular_values
            .iter()
            .zip(&s.normalized_cumsum)
            .enumerate()
        {
            writeln!(w, "{k1}-{k2},{i},{sig:e},{cum:e}")?;
        }
    }
    Ok(())
}
