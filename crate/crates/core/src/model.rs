//! Servable score model: grid, tensor train and value standardization.
//!
//! File layout (little-endian): magic `TTM1`, version `u16`, `d: u32`, grid
//! (`N: u32`, `tail_mass: f64`, `N + 1` boundaries, `N` centers as `f64`),
//! standardization (`mean: f64`, `std: f64`), provenance (tag as `u32` length +
//! UTF-8, `sample_count: u64`, `config_hash: u64`), then the embedded `TTJ1`
//! tensor prefixed by its byte length as `u64`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fit::{
    anova_init, anova_to_tt, fit_als, fit_anova1, fit_report_mse, AlsConfig, AlsReport, AnovaModel,
    Standardization,
};
use crate::grid::Grid1D;
use crate::samples::SampleSet;
use crate::tt::{truncated, IndexBatch, TTTensor};

pub const MODEL_MAGIC: &[u8; 4] = b"TTM1";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub generator_tag: String,
    pub sample_count: u64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    grid: Grid1D,
    tensor: TTTensor,
    standardization: Standardization,
    provenance: Provenance,
}

/// Outcome of [`fit_score_model`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ScoreModel,
    pub anova: AnovaModel,
    pub als: Option<AlsReport>,
}

impl ScoreModel {
    pub fn new(
        grid: Grid1D,
        tensor: TTTensor,
        standardization: Standardization,
        provenance: Provenance,
    ) -> Result<Self> {
        if tensor.mode_sizes().iter().any(|&n| n != grid.n_cells()) {
            return Err(Error::Shape(format!(
                "tensor modes {:?} do not match grid size {}",
                tensor.mode_sizes(),
                grid.n_cells()
            )));
        }
        if !(standardization.std > 0.0
            && standardization.std.is_finite()
            && standardization.mean.is_finite())
        {
            return Err(Error::Numerical(format!(
                "invalid standardization {standardization:?}"
            )));
        }
        Ok(ScoreModel {
            grid,
            tensor,
            standardization,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.tensor.ndim()
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn tensor(&self) -> &TTTensor {
        &self.tensor
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Scores for the rows of `indices`, on the raw (de-standardized) scale.
    pub fn eval_indices(&self, indices: &IndexBatch) -> Result<Vec<f64>> {
        let raw = self.tensor.eval_batch(indices)?;
        Ok(raw
            .into_iter()
            .map(|v| self.standardization.inverse(v))
            .collect())
    }

    /// Quantizes each latent row and looks up its score.
    pub fn eval_latents(&self, latents: &Array2<f64>) -> Result<Vec<f64>> {
        if latents.nrows() == 0 {
            return Ok(Vec::new());
        }
        if latents.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "latents have {} components, model expects {}",
                latents.ncols(),
                self.dim()
            )));
        }
        let mut idx = Array2::zeros(latents.dim());
        for (m, (z, mut out)) in latents.outer_iter().zip(idx.outer_iter_mut()).enumerate() {
            let q = self
                .grid
                .quantize(&z.to_vec())
                .map_err(|e| Error::Input(format!("latent row {m}: {e}")))?;
            for (o, i) in out.iter_mut().zip(q.0) {
                *o = i;
            }
        }
        self.eval_indices(&IndexBatch::new(idx))
    }

    /// Mean squared error on standardized values.
    pub fn holdout_mse(&self, holdout: &SampleSet) -> Result<f64> {
        let standardized: Vec<f64> = holdout
            .values()
            .iter()
            .map(|&v| self.standardization.forward(v))
            .collect();
        fit_report_mse(&self.tensor, &holdout.with_values(standardized)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u16::<LittleEndian>(MODEL_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_u32::<LittleEndian>(self.grid.n_cells() as u32)?;
        w.write_f64::<LittleEndian>(self.grid.tail_mass())?;
        for &t in self.grid.boundaries().iter().chain(self.grid.centers()) {
            w.write_f64::<LittleEndian>(t)?;
        }
        w.write_f64::<LittleEndian>(self.standardization.mean)?;
        w.write_f64::<LittleEndian>(self.standardization.std)?;
        let tag = self.provenance.generator_tag.as_bytes();
        w.write_u32::<LittleEndian>(tag.len() as u32)?;
        w.write_all(tag)?;
        w.write_u64::<LittleEndian>(self.provenance.sample_count)?;
        w.write_u64::<LittleEndian>(self.provenance.config_hash)?;
        let tt = self.tensor.to_bytes();
        w.write_u64::<LittleEndian>(tt.len() as u64)?;
        w.write_all(&tt)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format(format!(
                "bad model magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if n > u16::MAX as usize + 1 {
            return Err(Error::Format(format!("grid size {n} too large")));
        }
        let tail_mass = r.read_f64::<LittleEndian>().map_err(truncated)?;
        let mut boundaries = vec![0.0; n + 1];
        r.read_f64_into::<LittleEndian>(&mut boundaries)
            .map_err(truncated)?;
        let mut centers = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut centers)
            .map_err(truncated)?;
        let grid = Grid1D::from_parts(tail_mass, boundaries, centers)?;
        let mean = r.read_f64::<LittleEndian>().map_err(truncated)?;
        let std = r.read_f64::<LittleEndian>().map_err(truncated)?;
        let tag_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag).map_err(truncated)?;
        let generator_tag = String::from_utf8(tag)
            .map_err(|_| Error::Format("generator tag is not UTF-8".into()))?;
        let sample_count = r.read_u64::<LittleEndian>().map_err(truncated)?;
        let config_hash = r.read_u64::<LittleEndian>().map_err(truncated)?;
        let tt_len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let mut tt_bytes = Vec::new();
        (&mut r).take(tt_len as u64).read_to_end(&mut tt_bytes)?;
        if tt_bytes.len() != tt_len {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let tensor = TTTensor::from_bytes(&tt_bytes)?;
        if tensor.ndim() != d {
            return Err(Error::Format(format!(
                "model header says d = {d}, tensor has {} modes",
                tensor.ndim()
            )));
        }
        ScoreModel::new(
            grid,
            tensor,
            Standardization { mean, std },
            Provenance {
                generator_tag,
                sample_count,
                config_hash,
            },
        )
        .map_err(|e| Error::Format(format!("invalid model: {e}")))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// Fits a score model: standardize values, order-1 ANOVA, then optional ALS refinement
/// warm-started from the ANOVA tensor train.
pub fn fit_score_model(
    samples: &SampleSet,
    als: Option<&AlsConfig>,
    config_hash: u64,
) -> Result<FitOutcome> {
    let standardization = Standardization::from_values(samples.values())?;
    let standardized = samples.with_values(
        samples
            .values()
            .iter()
            .map(|&v| standardization.forward(v))
            .collect(),
    )?;
    let anova = fit_anova1(&standardized)?;
    let (tensor, report) = match als {
        None => (anova_to_tt(&anova)?, None),
        Some(cfg) => {
            let init = anova_init(&anova, cfg.rank, cfg.seed)?;
            let (tt, report) = fit_als(&standardized, &init, cfg)?;
            (tt, Some(report))
        }
    };
    let model = ScoreModel::new(
        samples.grid().clone(),
        tensor,
        standardization,
        Provenance {
            generator_tag: samples.tag().to_string(),
            sample_count: samples.len() as u64,
            config_hash,
        },
    )?;
    Ok(FitOutcome {
        model,
        anova,
        als: report,
    })
}
