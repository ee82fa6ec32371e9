//! Scored latent samples and their binary container.
//!
//! Layout (little-endian): magic `TTS1`, version `u16`, `d: u32`, `M: u64`,
//! `N: u32`, `tail_mass: f64`, generator tag (`u32` length + UTF-8 bytes), then
//! `M x d` latents as `f64`, `M x d` grid indices as `u16`, `M` values as `f64`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::tt::{truncated, IndexBatch};

pub const SAMPLES_MAGIC: &[u8; 4] = b"TTS1";
pub const SAMPLES_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    latents: Array2<f64>,
    indices: Array2<usize>,
    values: Vec<f64>,
    grid: Grid1D,
    tag: String,
}

impl SampleSet {
    /// Builds a sample set, quantizing `latents` on `grid`.
    pub fn new(
        latents: Array2<f64>,
        values: Vec<f64>,
        grid: Grid1D,
        tag: impl Into<String>,
    ) -> Result<Self> {
        if latents.nrows() == 0 {
            return Err(Error::Input("sample set is empty".into()));
        }
        if latents.nrows() != values.len() {
            return Err(Error::Shape(format!(
                "{} latents but {} values",
                latents.nrows(),
                values.len()
            )));
        }
        if let Some(m) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("value of sample {m} is not finite")));
        }
        if latents.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("latents contain non-finite entries".into()));
        }
        let mut indices = Array2::zeros(latents.dim());
        for (z, mut out) in latents.outer_iter().zip(indices.outer_iter_mut()) {
            grid.quantize_into(
                z.as_slice().expect("row-major latents"),
                out.as_slice_mut().expect("row-major"),
            );
        }
        Ok(SampleSet {
            latents: latents.as_standard_layout().into_owned(),
            indices,
            values,
            grid,
            tag: tag.into(),
        })
    }

    /// Samples addressed only by grid index, with latents at the cell centers.
    pub fn from_indices(
        indices: Array2<usize>,
        values: Vec<f64>,
        grid: Grid1D,
        tag: impl Into<String>,
    ) -> Result<Self> {
        let n = grid.n_cells();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Index {
                mode: 0,
                index: bad,
                size: n,
            });
        }
        let latents = indices.mapv(|i| grid.centers()[i]);
        Self::new(latents, values, grid, tag)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.latents.ncols()
    }

    pub fn latents(&self) -> &Array2<f64> {
        &self.latents
    }

    pub fn indices(&self) -> &Array2<usize> {
        &self.indices
    }

    pub fn index_batch(&self) -> IndexBatch {
        IndexBatch::new(self.indices.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Same latents and indices with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} values for {} samples",
                values.len(),
                self.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(
                "replacement values contain non-finite entries".into(),
            ));
        }
        Ok(SampleSet {
            values,
            ..self.clone()
        })
    }

    /// Rows `rows` (in the given order) as a new set.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("selection is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::Input(format!(
                "row {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(SampleSet {
            latents: self.latents.select(Axis(0), rows),
            indices: self.indices.select(Axis(0), rows),
            values: rows.iter().map(|&r| self.values[r]).collect(),
            grid: self.grid.clone(),
            tag: self.tag.clone(),
        })
    }

    /// Splits into the first `n_first` rows and the rest.
    pub fn split_at(&self, n_first: usize) -> Result<(Self, Self)> {
        let first: Vec<usize> = (0..n_first.min(self.len())).collect();
        let rest: Vec<usize> = (n_first..self.len()).collect();
        Ok((self.select(&first)?, self.select(&rest)?))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.n_cells();
        if n > u16::MAX as usize + 1 {
            return Err(Error::Format(format!(
                "grid size {n} does not fit u16 indices"
            )));
        }
        // the header stores only (N, tail mass); the grid is rebuilt on read
        if Grid1D::equal_mass(n, self.grid.tail_mass()).ok().as_ref() != Some(&self.grid) {
            return Err(Error::Format(
                "only equal-mass grids can be stored in a sample file".into(),
            ));
        }
        w.write_all(SAMPLES_MAGIC)?;
        w.write_u16::<LittleEndian>(SAMPLES_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(n as u32)?;
        w.write_f64::<LittleEndian>(self.grid.tail_mass())?;
        w.write_u32::<LittleEndian>(self.tag.len() as u32)?;
        w.write_all(self.tag.as_bytes())?;
        for &v in self.latents.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &i in self.indices.iter() {
            w.write_u16::<LittleEndian>(i as u16)?;
        }
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
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
        if &magic != SAMPLES_MAGIC {
            return Err(Error::Format(format!(
                "bad sample-set magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != SAMPLES_VERSION {
            return Err(Error::Format(format!(
                "unsupported sample-set version {version}"
            )));
        }
        let d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let m = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let tail_mass = r.read_f64::<LittleEndian>().map_err(truncated)?;
        let tag_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag).map_err(truncated)?;
        let tag = String::from_utf8(tag)
            .map_err(|_| Error::Format("generator tag is not UTF-8".into()))?;
        let grid = Grid1D::equal_mass(n, tail_mass)
            .map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
        let len = m
            .checked_mul(d)
            .ok_or_else(|| Error::Format("sample dimensions overflow".into()))?;
        let mut latents = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut latents)
            .map_err(truncated)?;
        let mut raw_idx = vec![0u16; len];
        r.read_u16_into::<LittleEndian>(&mut raw_idx)
            .map_err(truncated)?;
        let mut values = vec![0.0; m];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(truncated)?;
        let latents = Array2::from_shape_vec((m, d), latents).expect("length checked");
        let set = SampleSet::new(latents, values, grid, tag)
            .map_err(|e| Error::Format(format!("invalid samples: {e}")))?;
        if set
            .indices
            .iter()
            .zip(&raw_idx)
            .any(|(&a, &b)| a != b as usize)
        {
            return Err(Error::Format(
                "stored grid indices disagree with quantized latents".into(),
            ));
        }
        Ok(set)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    /// CSV with columns `z0..z{d-1}, i0..i{d-1}, value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d)
            .map(|k| format!("z{k}"))
            .chain((0..d).map(|k| format!("i{k}")))
            .chain(std::iter::once("value".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for m in 0..self.len() {
            let z = self
                .latents
                .row(m)
                .iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>();
            let i = self
                .indices
                .row(m)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>();
            writeln!(w, "{},{},{:e}", z.join(","), i.join(","), self.values[m])?;
        }
        Ok(())
    }
}
