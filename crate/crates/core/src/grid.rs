//! Equal-probability-mass discretization of a standard-normal latent axis.
//!
//! A [`Grid1D`] splits the (tail-clipped) real line into `N` intervals that each
//! carry the same standard-normal mass. The same grid is shared by every latent
//! coordinate, so the d-dimensional grid is the Cartesian product of `N` cells
//! per axis and lookups decompose coordinate-wise.
//!
//! Cell centers are mass midpoints. Nearest-center lookup is measured in
//! probability coordinates `u = Φ(z)`: there the centers are equally spaced and
//! the Voronoi boundaries between neighbouring centers are exactly the interval
//! boundaries, so "nearest center" and "containing interval" coincide and every
//! cell receives the same expected share of N(0, 1) samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Default probability mass clipped from each tail.
pub const DEFAULT_TAIL_MASS: f64 = 1e-4;

/// Default cell count per latent axis.
pub const DEFAULT_GRID_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_cells: usize,
    tail_mass: f64,
    boundaries: Vec<f64>,
    centers: Vec<f64>,
}

/// Grid cell per latent coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridIndex(pub Vec<usize>);

impl GridIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for GridIndex {
    fn from(v: Vec<usize>) -> Self {
        GridIndex(v)
    }
}

// Φ⁻¹ of the mass level `eps + frac * (1 - 2 eps)`.
fn level(frac: f64, tail_mass: f64) -> f64 {
    normal::quantile(tail_mass + frac * (1.0 - 2.0 * tail_mass))
}

impl Grid1D {
    /// Builds the equal-mass grid with `n_cells` intervals and `tail_mass` clipped at each end.
    pub fn equal_mass(n_cells: usize, tail_mass: f64) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        if n_cells > u16::MAX as usize + 1 {
            return Err(Error::Parameter(format!(
                "grid size {n_cells} exceeds {}",
                u16::MAX as usize + 1
            )));
        }
        if !(tail_mass > 0.0 && tail_mass < 0.5) {
            return Err(Error::Parameter(format!(
                "tail mass must lie in (0, 0.5), got {tail_mass}"
            )));
        }
        let n = n_cells as f64;
        let boundaries: Vec<f64> = (0..=n_cells)
            .map(|i| level(i as f64 / n, tail_mass))
            .collect();
        let centers: Vec<f64> = (0..n_cells)
            .map(|i| level((i as f64 + 0.5) / n, tail_mass))
            .collect();
        let grid = Grid1D {
            n_cells,
            tail_mass,
            boundaries,
            centers,
        };
        if !grid.boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parameter(format!(
                "tail mass {tail_mass} too small to separate {n_cells} cells in double precision"
            )));
        }
        Ok(grid)
    }

    /// Rebuilds a grid from stored arrays, validating the structural invariants.
    pub fn from_parts(tail_mass: f64, boundaries: Vec<f64>, centers: Vec<f64>) -> Result<Self> {
        let n_cells = centers.len();
        if n_cells < 2 || boundaries.len() != n_cells + 1 {
            return Err(Error::Format(format!(
                "grid with {} boundaries and {} centers",
                boundaries.len(),
                n_cells
            )));
        }
        let ordered = boundaries.iter().all(|t| t.is_finite())
            && boundaries.windows(2).all(|w| w[0] < w[1])
            && centers
                .iter()
                .enumerate()
                .all(|(i, &c)| boundaries[i] < c && c < boundaries[i + 1]);
        if !ordered {
            return Err(Error::Format(
                "grid boundaries/centers not strictly interleaved".into(),
            ));
        }
        Ok(Grid1D {
            n_cells,
            tail_mass,
            boundaries,
            centers,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Interval boundaries `t_0 < ... < t_N`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Standard-normal mass of cell `i`.
    pub fn cell_mass(&self, i: usize) -> f64 {
        normal::interval_mass(self.boundaries[i], self.boundaries[i + 1])
    }

    /// Cell of a single latent coordinate. Values on a boundary go to the lower cell;
    /// values beyond the clipped tails go to the edge cells.
    pub fn cell_of(&self, z: f64) -> usize {
        let interior = &self.boundaries[1..self.n_cells];
        interior.partition_point(|&t| t < z)
    }

    pub fn quantize(&self, z: &[f64]) -> Result<GridIndex> {
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "latent coordinate {k} is not finite ({})",
                z[k]
            )));
        }
        Ok(GridIndex(z.iter().map(|&v| self.cell_of(v)).collect()))
    }

    /// Quantizes into a caller-provided buffer; `z` must be finite.
    pub(crate) fn quantize_into(&self, z: &[f64], out: &mut [usize]) {
        for (o, &v) in out.iter_mut().zip(z) {
            *o = self.cell_of(v);
        }
    }

    pub fn center_vector(&self, idx: &GridIndex) -> Result<Vec<f64>> {
        idx.0
            .iter()
            .enumerate()
            .map(|(mode, &i)| {
                self.centers.get(i).copied().ok_or(Error::Index {
                    mode,
                    index: i,
                    size: self.n_cells,
                })
            })
            .collect()
    }
}

/// Ratio of N(0, 1) mass in the first interval of a uniform grid to the mass in
/// its middle interval `n_points / 2 - 1`.
///
/// The grid has points `t_i = a + (b - a) / (n_points - 1) * i`, `i = 0..n_points`.
pub fn uniform_grid_mass_ratio(a: f64, b: f64, n_points: usize) -> Result<f64> {
    if a.is_nan() || b.is_nan() || a >= b || n_points < 3 {
        return Err(Error::Parameter(format!(
            "uniform grid needs a < b and at least 3 points (a={a}, b={b}, n={n_points})"
        )));
    }
    let step = (b - a) / (n_points - 1) as f64;
    let t = |i: usize| a + step * i as f64;
    let mid = n_points / 2 - 1;
    let first = normal::interval_mass(t(0), t(1));
    let middle = normal::interval_mass(t(mid), t(mid + 1));
    Ok(first / middle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(x: f64) -> f64 {
        normal::cdf(x)
    }

    // Independent quantile: plain bisection on the CDF.
    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_cells_split_at_zero() {
        let g = Grid1D::equal_mass(2, 1e-12).unwrap();
        assert!(g.boundaries()[1].abs() < 1e-15);
    }

    #[test]
    fn quartiles_without_tail_clipping() {
        let interior: Vec<f64> = (1..4).map(|i| level(i as f64 / 4.0, 0.0)).collect();
        let oracle: Vec<f64> = (1..4).map(|i| bisect_quantile(i as f64 / 4.0)).collect();
        for (x, o) in interior.iter().zip(&oracle) {
            assert!((x - o).abs() < 1e-12, "{x} vs {o}");
        }
        assert!((interior[0] + 0.6745).abs() < 1e-4);
        assert!(interior[1].abs() < 1e-15);
        assert!((interior[2] - 0.6745).abs() < 1e-4);
    }

    #[test]
    fn tail_levels() {
        let eps = 1e-4;
        let g = Grid1D::equal_mass(32, eps).unwrap();
        let b = g.boundaries();
        assert!((phi(b[0]) - eps).abs() < 1e-15);
        assert!((phi(b[32]) - (1.0 - eps)).abs() < 1e-14);
        for (i, &c) in g.centers().iter().enumerate() {
            assert!(b[i] < c && c < b[i + 1]);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            Grid1D::equal_mass(1, 1e-4),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            Grid1D::equal_mass(8, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            Grid1D::equal_mass(8, 0.5),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            Grid1D::equal_mass(8, f64::NAN),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn exact_centers_quantize_to_themselves() {
        let g = Grid1D::equal_mass(16, 1e-4).unwrap();
        let z = [g.centers()[3], g.centers()[7]];
        assert_eq!(g.quantize(&z).unwrap().0, vec![3, 7]);
    }

    #[test]
    fn boundary_ties_go_low() {
        let g = Grid1D::equal_mass(8, 1e-4).unwrap();
        for i in 1..8 {
            assert_eq!(g.cell_of(g.boundaries()[i]), i - 1);
        }
    }

    #[test]
    fn beyond_tails_clamp_to_edges() {
        let g = Grid1D::equal_mass(8, 1e-4).unwrap();
        let far = g.boundaries()[8] + 10.0;
        assert_eq!(g.quantize(&[far, far, far]).unwrap().0, vec![7, 7, 7]);
        assert_eq!(g.cell_of(-1e9), 0);
    }

    #[test]
    fn nearest_center_in_probability_coordinates() {
        // brute force over all centers using |Φ(z) - Φ(c_i)|
        let g = Grid1D::equal_mass(10, 1e-3).unwrap();
        let mut z = -4.0;
        while z < 4.0 {
            let u = phi(z);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &c) in g.centers().iter().enumerate() {
                let d = (u - phi(c)).abs();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            assert_eq!(g.cell_of(z), best, "z = {z}");
            z += 0.0137;
        }
    }

    #[test]
    fn non_finite_latent_is_rejected() {
        let g = Grid1D::equal_mass(8, 1e-4).unwrap();
        assert!(matches!(g.quantize(&[0.0, f64::NAN]), Err(Error::Input(_))));
        assert!(matches!(g.quantize(&[f64::INFINITY]), Err(Error::Input(_))));
    }

    #[test]
    fn center_vector_edges() {
        let g = Grid1D::equal_mass(8, 1e-4).unwrap();
        let v = g.center_vector(&GridIndex(vec![0; 5])).unwrap();
        assert!(v.iter().all(|&c| c == g.centers()[0]));
        // symmetric grid: middle pair of centers mirror each other
        let mid = g.center_vector(&GridIndex(vec![3, 4])).unwrap();
        assert!((mid[0] + mid[1]).abs() < 1e-14);
        assert!(matches!(
            g.center_vector(&GridIndex(vec![0, 8])),
            Err(Error::Index {
                mode: 1,
                index: 8,
                size: 8
            })
        ));
    }

    #[test]
    fn exhaustive_round_trip_small_grid() {
        let g = Grid1D::equal_mass(4, 1e-4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let idx = GridIndex(vec![a, b, c]);
                    let z = g.center_vector(&idx).unwrap();
                    assert_eq!(g.quantize(&z).unwrap(), idx);
                }
            }
        }
    }

    #[test]
    fn uniform_ratio_symmetry() {
        // first and last interval of a symmetric uniform grid carry equal mass
        let (a, b, n) = (-2.5, 2.5, 11);
        let step = (b - a) / (n - 1) as f64;
        let first = normal::interval_mass(a, a + step);
        let last = normal::interval_mass(b - step, b);
        assert!((first / last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_ratio_rejects_bad_input() {
        assert!(uniform_grid_mass_ratio(1.0, 1.0, 10).is_err());
        assert!(uniform_grid_mass_ratio(-1.0, 1.0, 2).is_err());
    }
}
