use log::warn;
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tt::TTTensor;

/// Order-1 ANOVA surrogate `c0 + Σ_k effects[k][i_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaModel {
    pub c0: f64,
    /// `d x N` main effects.
    pub effects: Array2<f64>,
    /// `d x N` per-cell sample counts.
    pub counts: Array2<usize>,
    /// `(component, cell)` pairs that had no samples; their effect is 0.
    pub empty_cells: Vec<(usize, usize)>,
}

impl AnovaModel {
    pub fn ndim(&self) -> usize {
        self.effects.nrows()
    }

    pub fn n_cells(&self) -> usize {
        self.effects.ncols()
    }

    pub fn eval(&self, idx: &[usize]) -> f64 {
        self.c0
            + idx
                .iter()
                .enumerate()
                .map(|(k, &i)| self.effects[[k, i]])
                .sum::<f64>()
    }
}

pub fn fit_anova1(samples: &SampleSet) -> Result<AnovaModel> {
    if samples.is_empty() {
        return Err(Error::Input(
            "cannot fit ANOVA to an empty sample set".into(),
        ));
    }
    let d = samples.dim();
    if d < 2 {
        return Err(Error::Parameter(format!(
            "ANOVA fit needs at least 2 components, got {d}"
        )));
    }
    let n = samples.grid().n_cells();
    let values = samples.values();
    let c0 = values.iter().sum::<f64>() / values.len() as f64;
    let mut sums = Array2::<f64>::zeros((d, n));
    let mut counts = Array2::<usize>::zeros((d, n));
    for (row, &v) in samples.indices().outer_iter().zip(values) {
        for (k, &i) in row.iter().enumerate() {
            sums[[k, i]] += v;
            counts[[k, i]] += 1;
        }
    }
    let mut effects = Array2::<f64>::zeros((d, n));
    let mut empty_cells = Vec::new();
    for k in 0..d {
        for i in 0..n {
            let c = counts[[k, i]];
            if c == 0 {
                empty_cells.push((k, i));
            } else {
                effects[[k, i]] = sums[[k, i]] / c as f64 - c0;
            }
        }
    }
    if !empty_cells.is_empty() {
        warn!(
            "{} empty grid cells in ANOVA fit; their effects default to 0",
            empty_cells.len()
        );
    }
    Ok(AnovaModel {
        c0,
        effects,
        counts,
        empty_cells,
    })
}

/// Exact rank-2 tensor train of an order-1 ANOVA model.
///
/// The state carried through the chain is `(1, partial sum)`: the first core
/// emits `[1, f_1(i)]`, middle cores apply `[[1, f_k(i)], [0, 1]]`, and the last
/// core contracts with `[f_d(i) + c0, 1]ᵀ`.
pub fn anova_to_tt(model: &AnovaModel) -> Result<TTTensor> {
    let (d, n) = model.effects.dim();
    if d < 2 {
        return Err(Error::Parameter(format!("ANOVA model with {d} components")));
    }
    let f = &model.effects;
    let mut cores = Vec::with_capacity(d);
    cores.push(Array3::from_shape_fn((1, n, 2), |(_, i, b)| {
        if b == 0 {
            1.0
        } else {
            f[[0, i]]
        }
    }));
    for k in 1..d - 1 {
        cores.push(Array3::from_shape_fn((2, n, 2), |(a, i, b)| match (a, b) {
            (0, 0) | (1, 1) => 1.0,
            (0, 1) => f[[k, i]],
            _ => 0.0,
        }));
    }
    cores.push(Array3::from_shape_fn((2, n, 1), |(a, i, _)| {
        if a == 0 {
            f[[d - 1, i]] + model.c0
        } else {
            1.0
        }
    }));
    TTTensor::new(cores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;

    fn full_grid_samples(n: usize, f: impl Fn(usize, usize) -> f64) -> SampleSet {
        let grid = Grid1D::equal_mass(n, 1e-4).unwrap();
        let mut idx = Array2::zeros((n * n, 2));
        let mut vals = Vec::new();
        for a in 0..n {
            for b in 0..n {
                idx[[a * n + b, 0]] = a;
                idx[[a * n + b, 1]] = b;
                vals.push(f(a, b));
            }
        }
        SampleSet::from_indices(idx, vals, grid, "test").unwrap()
    }

    #[test]
    fn constant_values() {
        let m = fit_anova1(&full_grid_samples(4, |_, _| 2.5)).unwrap();
        assert_eq!(m.c0, 2.5);
        assert!(m.effects.iter().all(|&e| e == 0.0));
        assert!(m.empty_cells.is_empty());
    }

    #[test]
    fn additive_values_recovered() {
        let g1 = |i: usize| (i as f64).sin() * 3.0;
        let g2 = |j: usize| (j as f64 * 0.7).powi(2);
        let n = 8;
        let m = fit_anova1(&full_grid_samples(n, |a, b| g1(a) + g2(b))).unwrap();
        let mean1 = (0..n).map(g1).sum::<f64>() / n as f64;
        let mean2 = (0..n).map(g2).sum::<f64>() / n as f64;
        for i in 0..n {
            assert!((m.effects[[0, i]] - (g1(i) - mean1)).abs() <= 1e-12);
            assert!((m.effects[[1, i]] - (g2(i) - mean2)).abs() <= 1e-12);
        }
        assert!((m.c0 - (mean1 + mean2)).abs() < 1e-12);
    }

    #[test]
    fn count_weighted_centering() {
        let grid = Grid1D::equal_mass(4, 1e-4).unwrap();
        let idx = Array2::from_shape_vec((5, 2), vec![0, 1, 0, 2, 1, 1, 3, 3, 3, 0]).unwrap();
        let m = fit_anova1(
            &SampleSet::from_indices(idx, vec![1.0, 4.0, -2.0, 0.5, 7.0], grid, "").unwrap(),
        )
        .unwrap();
        for k in 0..2 {
            let s: f64 = (0..4)
                .map(|i| m.counts[[k, i]] as f64 * m.effects[[k, i]])
                .sum();
            assert!(s.abs() < 1e-12);
        }
        assert_eq!(m.empty_cells, vec![(0, 2)]);
    }

    #[test]
    fn one_dimensional_input_rejected() {
        let grid = Grid1D::equal_mass(4, 1e-4).unwrap();
        let s = SampleSet::from_indices(Array2::zeros((2, 1)), vec![1.0, 2.0], grid, "").unwrap();
        assert!(matches!(fit_anova1(&s), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_effects_give_constant_tt() {
        let m = AnovaModel {
            c0: -1.25,
            effects: Array2::zeros((4, 3)),
            counts: Array2::ones((4, 3)),
            empty_cells: vec![],
        };
        let dense = anova_to_tt(&m).unwrap().materialize(1000).unwrap();
        assert!(dense.iter().all(|&v| v == -1.25));
    }
}
