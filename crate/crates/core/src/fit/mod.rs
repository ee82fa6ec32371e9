//! Fitting tensor trains to scattered scored samples.

mod als;
mod anova;

pub use als::{anova_init, fit_als, AlsConfig, AlsReport, SweepRecord};
pub use anova::{anova_to_tt, fit_anova1, AnovaModel};

use crate::error::{Error, Result};
use crate::samples::SampleSet;
use crate::tt::TTTensor;

/// Mean squared error of `t` against the holdout values.
pub fn fit_report_mse(t: &TTTensor, holdout: &SampleSet) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Input("holdout set is empty".into()));
    }
    let pred = t.eval_batch(&holdout.index_batch())?;
    let sum: f64 = pred
        .iter()
        .zip(holdout.values())
        .map(|(p, v)| (p - v) * (p - v))
        .sum();
    Ok(sum / holdout.len() as f64)
}

/// Affine map between raw scores and the unit-variance scale the tensor is fitted on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    /// Population mean and standard deviation; a constant sample gets `std = 1`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("cannot standardize an empty value set".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Standardization { mean, std })
    }

    pub fn identity() -> Self {
        Standardization {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        self.mean + self.std * v
    }
}
