//! Score-based versus norm-based sample filtering, measured by k-NN precision and recall.

use log::warn;
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::samples::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    /// Score looked up in a fitted [`ScoreModel`].
    TtScore,
    /// Exact score stored with each sample.
    ExactScore,
    /// Euclidean norm of the latent code.
    LatentNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    KeepAbove,
    KeepBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterCriterion {
    kind: CriterionKind,
    direction: Direction,
}

impl FilterCriterion {
    pub fn new(kind: CriterionKind, direction: Direction) -> Result<Self> {
        let expected = match kind {
            CriterionKind::TtScore | CriterionKind::ExactScore => Direction::KeepAbove,
            CriterionKind::LatentNorm => Direction::KeepBelow,
        };
        if direction != expected {
            return Err(Error::Config(format!(
                "{kind:?} filtering must use {expected:?}"
            )));
        }
        Ok(FilterCriterion { kind, direction })
    }

    pub fn tt_score() -> Self {
        FilterCriterion {
            kind: CriterionKind::TtScore,
            direction: Direction::KeepAbove,
        }
    }

    pub fn exact_score() -> Self {
        FilterCriterion {
            kind: CriterionKind::ExactScore,
            direction: Direction::KeepAbove,
        }
    }

    pub fn latent_norm() -> Self {
        FilterCriterion {
            kind: CriterionKind::LatentNorm,
            direction: Direction::KeepBelow,
        }
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CriterionKind::TtScore => "tt_score",
            CriterionKind::ExactScore => "exact_score",
            CriterionKind::LatentNorm => "latent_norm",
        }
    }

    fn keeps(&self, value: f64, threshold: f64) -> bool {
        match self.direction {
            Direction::KeepAbove => value >= threshold,
            Direction::KeepBelow => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrCurvePoint {
    pub threshold: f64,
    pub kept_fraction: f64,
    pub precision: f64,
    pub recall: f64,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// squared distance from each point to its k-th nearest other point
fn knn_radii_sq(points: &Array2<f64>, k: usize) -> Vec<f64> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut d: Vec<f64> = points
                .outer_iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| sq_dist(p, q))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect()
}

// fraction of `queries` inside at least one k-NN ball of `support`
fn coverage(queries: &Array2<f64>, support: &Array2<f64>, radii_sq: &[f64]) -> f64 {
    let inside = queries
        .outer_iter()
        .into_par_iter()
        .filter(|q| {
            support
                .outer_iter()
                .zip(radii_sq)
                .any(|(s, &r)| sq_dist(q.view(), s) <= r)
        })
        .count();
    inside as f64 / queries.nrows() as f64
}

/// Improved precision and recall of generated features against real features.
///
/// Each point set defines a manifold as the union of balls reaching each point's
/// `k`-th nearest neighbour within its own set. Precision is the share of
/// generated points inside the real manifold; recall is the share of real points
/// inside the generated manifold.
pub fn knn_precision_recall(
    real_feats: &Array2<f64>,
    gen_feats: &Array2<f64>,
    k: usize,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k >= real_feats.nrows() || k >= gen_feats.nrows() {
        return Err(Error::Parameter(format!(
            "k = {k} needs more than k real ({}) and generated ({}) points",
            real_feats.nrows(),
            gen_feats.nrows()
        )));
    }
    if real_feats.ncols() != gen_feats.ncols() {
        return Err(Error::Shape(format!(
            "real features have {} columns, generated have {}",
            real_feats.ncols(),
            gen_feats.ncols()
        )));
    }
    let real_radii = knn_radii_sq(real_feats, k);
    let gen_radii = knn_radii_sq(gen_feats, k);
    let precision = coverage(gen_feats, real_feats, &real_radii);
    let recall = coverage(real_feats, gen_feats, &gen_radii);
    Ok((precision, recall))
}

/// Per-sample value the criterion thresholds on.
pub fn criterion_values(
    samples: &SampleSet,
    criterion: FilterCriterion,
    model: Option<&ScoreModel>,
) -> Result<Vec<f64>> {
    match criterion.kind {
        CriterionKind::TtScore => {
            let model = model
                .ok_or_else(|| Error::Config("tt_score filtering requires a score model".into()))?;
            if model.dim() != samples.dim() {
                return Err(Error::Shape(format!(
                    "model has {} components, samples have {}",
                    model.dim(),
                    samples.dim()
                )));
            }
            if model.grid() != samples.grid() {
                // indices stored with the samples belong to another grid; requantize
                return model.eval_latents(samples.latents());
            }
            model.eval_indices(&samples.index_batch())
        }
        CriterionKind::ExactScore => Ok(samples.values().to_vec()),
        CriterionKind::LatentNorm => Ok(samples
            .latents()
            .outer_iter()
            .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()),
    }
}

/// Rows kept by `criterion` at `threshold`, in sample order.
pub fn filter_population(
    samples: &SampleSet,
    criterion: FilterCriterion,
    model: Option<&ScoreModel>,
    threshold: f64,
) -> Result<Vec<usize>> {
    let values = criterion_values(samples, criterion, model)?;
    Ok(filter_values(&values, criterion, threshold))
}

fn filter_values(values: &[f64], criterion: FilterCriterion, threshold: f64) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|&(_, &v)| criterion.keeps(v, threshold))
        .map(|(i, _)| i)
        .collect()
}

/// Thresholds that keep (at least) `round(f · M)` samples for each fraction `f ∈ (0, 1]`.
pub fn thresholds_for_fractions(
    values: &[f64],
    criterion: FilterCriterion,
    fractions: &[f64],
) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Input("no values to threshold".into()));
    }
    let mut sorted = values.to_vec();
    match criterion.direction {
        Direction::KeepAbove => sorted.sort_by(|a, b| b.total_cmp(a)),
        Direction::KeepBelow => sorted.sort_by(|a, b| a.total_cmp(b)),
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Parameter(format!(
                    "kept fraction {f} outside (0, 1]"
                )));
            }
            let keep = ((f * values.len() as f64).round() as usize).clamp(1, values.len());
            Ok(sorted[keep - 1])
        })
        .collect()
}

/// One precision/recall curve per criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub criterion: FilterCriterion,
    pub points: Vec<PrCurvePoint>,
}

/// Filters the population at every threshold of every criterion and measures
/// k-NN precision/recall of the kept features against the real features.
///
/// `gen_feats` row `m` is the embedding of sample `m`. Points whose kept set is
/// too small for the k-NN metric are skipped with a warning.
pub fn sweep_tradeoff(
    samples: &SampleSet,
    gen_feats: &Array2<f64>,
    real_feats: &Array2<f64>,
    criteria: &[(FilterCriterion, Vec<f64>)],
    model: Option<&ScoreModel>,
    k: usize,
) -> Result<Vec<TradeoffCurve>> {
    if gen_feats.nrows() != samples.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} samples",
            gen_feats.nrows(),
            samples.len()
        )));
    }
    if k == 0 || k >= real_feats.nrows() {
        return Err(Error::Parameter(format!(
            "k = {k} invalid for {} reference points",
            real_feats.nrows()
        )));
    }
    let total = samples.len() as f64;
    let mut curves = Vec::with_capacity(criteria.len());
    for (criterion, thresholds) in criteria {
        let values = criterion_values(samples, *criterion, model)?;
        let mut points = Vec::with_capacity(thresholds.len());
        for &threshold in thresholds {
            let kept = filter_values(&values, *criterion, threshold);
            if kept.len() <= k {
                warn!(
                    "{} threshold {threshold}: {} samples kept, too few for k = {k}; point skipped",
                    criterion.name(),
                    kept.len()
                );
                continue;
            }
            let feats = gen_feats.select(Axis(0), &kept);
            let (precision, recall) = knn_precision_recall(real_feats, &feats, k)?;
            points.push(PrCurvePoint {
                threshold,
                kept_fraction: kept.len() as f64 / total,
                precision,
                recall,
            });
        }
        curves.push(TradeoffCurve {
            criterion: *criterion,
            points,
        });
    }
    Ok(curves)
}

/// Curve CSV with header `criterion,threshold,kept_fraction,precision,recall`.
pub fn write_curve_csv<W: std::io::Write>(
    mut w: W,
    curves: &[TradeoffCurve],
) -> std::io::Result<()> {
    writeln!(w, "criterion,threshold,kept_fraction,precision,recall")?;
    for c in curves {
        for p in &c.points {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e}",
                c.criterion.name(),
                p.threshold,
                p.kept_fraction,
                p.precision,
                p.recall
            )?;
        }
    }
    Ok(())
}
