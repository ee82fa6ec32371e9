//! Tensor-train container.
//!
//! Element `[i_1, ..., i_d]` is the matrix chain `G_1[i_1] G_2[i_2] ... G_d[i_d]`,
//! where core `k` has shape `(r_{k-1}, N_k, r_k)` and `r_0 = r_d = 1`. Evaluation
//! sweeps left to right: the running state starts as the `1 x r_1` row
//! `G_1[i_1]` and every later core costs one vector-matrix product, `d - 1` in
//! total.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridIndex;

pub const TT_MAGIC: &[u8; 4] = b"TTJ1";
pub const TT_VERSION: u16 = 1;

/// Default cap on dense materialization.
pub const DEFAULT_DENSE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TTTensor {
    cores: Vec<Array3<f64>>,
}

/// Rows of grid indices evaluated together.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBatch {
    rows: Array2<usize>,
}

impl IndexBatch {
    pub fn new(rows: Array2<usize>) -> Self {
        IndexBatch { rows }
    }

    pub fn from_indices(indices: &[GridIndex]) -> Result<Self> {
        let d = indices.first().map_or(0, |i| i.len());
        let mut rows = Array2::zeros((indices.len(), d));
        for (r, idx) in indices.iter().enumerate() {
            if idx.len() != d {
                return Err(Error::Shape(format!(
                    "batch row {r} has {} components, expected {d}",
                    idx.len()
                )));
            }
            for (c, &v) in idx.as_slice().iter().enumerate() {
                rows[[r, c]] = v;
            }
        }
        Ok(IndexBatch { rows })
    }

    pub fn rows(&self) -> &Array2<usize> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

impl TTTensor {
    pub fn new(cores: Vec<Array3<f64>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Shape("tensor train needs at least one core".into()));
        }
        let d = cores.len();
        if cores[0].shape()[0] != 1 || cores[d - 1].shape()[2] != 1 {
            return Err(Error::Shape(format!(
                "boundary ranks must be 1, got r_0 = {} and r_d = {}",
                cores[0].shape()[0],
                cores[d - 1].shape()[2]
            )));
        }
        for k in 1..d {
            let (left, right) = (cores[k - 1].shape()[2], cores[k].shape()[0]);
            if left != right {
                return Err(Error::Shape(format!(
                    "rank mismatch between cores {} and {k}: {left} vs {right}",
                    k - 1
                )));
            }
        }
        for (k, core) in cores.iter().enumerate() {
            if core.shape().contains(&0) {
                return Err(Error::Shape(format!(
                    "core {k} has an empty dimension {:?}",
                    core.shape()
                )));
            }
            if core.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "core {k} contains non-finite entries"
                )));
            }
        }
        Ok(TTTensor { cores })
    }

    /// Random tensor train with i.i.d. `N(0, 1) / sqrt(r_k)` entries, where `r_k` is the core's right rank.
    pub fn random(mode_sizes: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        check_shape_spec(mode_sizes, ranks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let scale = 1.0 / (ranks[k + 1] as f64).sqrt();
                Array3::from_shape_simple_fn((ranks[k], n, ranks[k + 1]), || {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x * scale
                })
            })
            .collect();
        TTTensor::new(cores)
    }

    pub fn zeros(mode_sizes: &[usize], ranks: &[usize]) -> Result<Self> {
        check_shape_spec(mode_sizes, ranks)?;
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| Array3::zeros((ranks[k], n, ranks[k + 1])))
            .collect();
        TTTensor::new(cores)
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Array3<f64>] {
        &self.cores
    }

    pub(crate) fn core_mut(&mut self, k: usize) -> &mut Array3<f64> {
        &mut self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Array3<f64>> {
        self.cores
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// `(r_0, ..., r_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.cores.iter().map(|c| c.shape()[2]));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.cores.len() {
            return Err(Error::Shape(format!(
                "index has {} components, tensor has {} modes",
                idx.len(),
                self.cores.len()
            )));
        }
        for (mode, (&i, core)) in idx.iter().zip(&self.cores).enumerate() {
            let size = core.shape()[1];
            if i >= size {
                return Err(Error::Index {
                    mode,
                    index: i,
                    size,
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, idx: &GridIndex) -> Result<f64> {
        self.eval_counted(idx).map(|(v, _)| v)
    }

    /// Evaluates one element and reports how many vector-matrix products the sweep performed.
    pub fn eval_counted(&self, idx: &GridIndex) -> Result<(f64, usize)> {
        let idx = idx.as_slice();
        self.check_index(idx)?;
        let mut state: Vec<f64> = self.cores[0].index_axis(Axis(1), idx[0]).row(0).to_vec();
        let mut next = Vec::new();
        let mut products = 0;
        for (core, &i) in self.cores.iter().zip(idx).skip(1) {
            let slice = core.index_axis(Axis(1), i);
            next.clear();
            next.resize(slice.ncols(), 0.0);
            for (a, &s) in state.iter().enumerate() {
                for (b, &g) in slice.row(a).iter().enumerate() {
                    next[b] += s * g;
                }
            }
            products += 1;
            std::mem::swap(&mut state, &mut next);
        }
        Ok((state[0], products))
    }

    /// Evaluates a batch of indices. The sweep keeps one `B x r_k` state matrix;
    /// each row follows the same floating-point order as [`TTTensor::eval`].
    pub fn eval_batch(&self, batch: &IndexBatch) -> Result<Vec<f64>> {
        let rows = batch.rows();
        if rows.nrows() == 0 {
            return Ok(Vec::new());
        }
        if rows.ncols() != self.cores.len() {
            return Err(Error::Shape(format!(
                "batch rows have {} components, tensor has {} modes",
                rows.ncols(),
                self.cores.len()
            )));
        }
        for (mode, core) in self.cores.iter().enumerate() {
            let size = core.shape()[1];
            if let Some(&i) = rows.column(mode).iter().find(|&&i| i >= size) {
                return Err(Error::Index {
                    mode,
                    index: i,
                    size,
                });
            }
        }
        const CHUNK: usize = 4096;
        let out: Vec<f64> = rows
            .axis_chunks_iter(Axis(0), CHUNK)
            .into_par_iter()
            .flat_map_iter(|chunk| self.sweep_chunk(chunk))
            .collect();
        Ok(out)
    }

    fn sweep_chunk(&self, rows: ndarray::ArrayView2<'_, usize>) -> Vec<f64> {
        let b = rows.nrows();
        let first = &self.cores[0];
        let mut state = Array2::<f64>::zeros((b, first.shape()[2]));
        for (m, mut st) in state.outer_iter_mut().enumerate() {
            st.assign(&first.index_axis(Axis(1), rows[[m, 0]]).row(0));
        }
        for (k, core) in self.cores.iter().enumerate().skip(1) {
            let mut next = Array2::<f64>::zeros((b, core.shape()[2]));
            for (m, mut out) in next.outer_iter_mut().enumerate() {
                let slice = core.index_axis(Axis(1), rows[[m, k]]);
                for (a, &s) in state.row(m).iter().enumerate() {
                    for (o, &g) in out.iter_mut().zip(slice.row(a)) {
                        *o += s * g;
                    }
                }
            }
            state = next;
        }
        state.column(0).to_vec()
    }

    /// Dense tensor with every entry, refusing shapes above `cap` entries.
    pub fn materialize(&self, cap: usize) -> Result<ArrayD<f64>> {
        let shape = self.mode_sizes();
        let entries: u128 = shape.iter().map(|&n| n as u128).product();
        if entries > cap as u128 {
            return Err(Error::SizeCap { entries, cap });
        }
        // Left-to-right contraction into a (prod N_1..N_k) x r_k matrix, in the
        // same accumulation order as eval so entries agree bit for bit.
        let mut acc = self.cores[0].index_axis(Axis(0), 0).to_owned();
        for core in &self.cores[1..] {
            let (_, n, r_next) = core.dim();
            let mut next = Array2::<f64>::zeros((acc.nrows() * n, r_next));
            for (p, state) in acc.outer_iter().enumerate() {
                for i in 0..n {
                    let slice = core.index_axis(Axis(1), i);
                    let mut out = next.row_mut(p * n + i);
                    for (a, &s) in state.iter().enumerate() {
                        for (o, &g) in out.iter_mut().zip(slice.row(a)) {
                            *o += s * g;
                        }
                    }
                }
            }
            acc = next;
        }
        let flat = acc
            .into_shape_with_order(entries as usize)
            .expect("final rank is 1");
        Ok(flat
            .into_shape_with_order(IxDyn(&shape))
            .expect("entries match shape"))
    }

    /// Multiplies every slice of core `k` by `alpha`.
    pub fn scale_core(&mut self, k: usize, alpha: f64) {
        self.cores[k].mapv_inplace(|v| v * alpha);
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TT_MAGIC)?;
        w.write_u16::<LittleEndian>(TT_VERSION)?;
        w.write_u32::<LittleEndian>(self.cores.len() as u32)?;
        for core in &self.cores {
            let (r_prev, n, r_next) = core.dim();
            w.write_u32::<LittleEndian>(r_prev as u32)?;
            w.write_u32::<LittleEndian>(n as u32)?;
            w.write_u32::<LittleEndian>(r_next as u32)?;
            // iter() on a standard-layout array is row-major
            for &v in core.iter() {
                w.write_f64::<LittleEndian>(v)?;
            }
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
        if &magic != TT_MAGIC {
            return Err(Error::Format(format!(
                "bad tensor-train magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
        if version != TT_VERSION {
            return Err(Error::Format(format!(
                "unsupported tensor-train version {version}"
            )));
        }
        let d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if d == 0 {
            return Err(Error::Format("tensor train with zero cores".into()));
        }
        let mut cores = Vec::with_capacity(d.min(4096));
        for _ in 0..d {
            let r_prev = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let r_next = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let len = r_prev
                .checked_mul(n)
                .and_then(|x| x.checked_mul(r_next))
                .ok_or_else(|| Error::Format("core size overflows".into()))?;
            let mut data = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut data)
                .map_err(truncated)?;
            cores.push(Array3::from_shape_vec((r_prev, n, r_next), data).expect("length checked"));
        }
        TTTensor::new(cores).map_err(|e| Error::Format(format!("invalid tensor train: {e}")))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

fn check_shape_spec(mode_sizes: &[usize], ranks: &[usize]) -> Result<()> {
    let d = mode_sizes.len();
    if d == 0 {
        return Err(Error::Shape("no modes".into()));
    }
    if ranks.len() != d + 1 {
        return Err(Error::Shape(format!(
            "expected {} ranks for {d} modes, got {}",
            d + 1,
            ranks.len()
        )));
    }
    if ranks[0] != 1 || ranks[d] != 1 {
        return Err(Error::Shape(format!(
            "boundary ranks must be 1, got {:?}",
            ranks
        )));
    }
    if ranks.contains(&0) || mode_sizes.contains(&0) {
        return Err(Error::Shape("ranks and mode sizes must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(v: &[usize]) -> GridIndex {
        GridIndex(v.to_vec())
    }

    #[test]
    fn identity_chain_is_one() {
        let cores = (0..5).map(|_| Array3::ones((1, 3, 1))).collect();
        let t = TTTensor::new(cores).unwrap();
        assert_eq!(t.eval(&idx(&[0, 1, 2, 0, 2])).unwrap(), 1.0);
    }

    #[test]
    fn counts_one_product_per_core_after_the_first() {
        let t = TTTensor::random(&[2; 7], &[1, 2, 3, 2, 2, 3, 2, 1], 3).unwrap();
        let (_, products) = t.eval_counted(&idx(&[1; 7])).unwrap();
        assert_eq!(products, 6);
    }

    #[test]
    fn index_errors() {
        let t = TTTensor::random(&[3, 3], &[1, 2, 1], 0).unwrap();
        assert!(matches!(
            t.eval(&idx(&[0, 3])),
            Err(Error::Index {
                mode: 1,
                index: 3,
                size: 3
            })
        ));
        assert!(matches!(t.eval(&idx(&[0])), Err(Error::Shape(_))));
        let batch = IndexBatch::new(Array2::from_shape_vec((1, 2), vec![5, 0]).unwrap());
        assert!(matches!(
            t.eval_batch(&batch),
            Err(Error::Index { mode: 0, .. })
        ));
    }

    #[test]
    fn random_is_reproducible() {
        let a = TTTensor::random(&[4, 5, 6], &[1, 3, 2, 1], 42).unwrap();
        let b = TTTensor::random(&[4, 5, 6], &[1, 3, 2, 1], 42).unwrap();
        let c = TTTensor::random(&[4, 5, 6], &[1, 3, 2, 1], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_ranks() {
        assert!(matches!(
            TTTensor::random(&[3, 3], &[2, 2, 1], 0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            TTTensor::random(&[3, 3], &[1, 2], 0),
            Err(Error::Shape(_))
        ));
        let bad = vec![Array3::zeros((1, 2, 2)), Array3::zeros((3, 2, 1))];
        assert!(matches!(TTTensor::new(bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_tensor_materializes_to_zeros() {
        let t = TTTensor::zeros(&[2, 3, 4], &[1, 2, 2, 1]).unwrap();
        let dense = t.materialize(DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(dense.shape(), &[2, 3, 4]);
        assert!(dense.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn materialize_cap() {
        let t = TTTensor::random(&[32; 6], &[1, 1, 1, 1, 1, 1, 1], 0).unwrap();
        assert!(matches!(
            t.materialize(DEFAULT_DENSE_CAP),
            Err(Error::SizeCap { .. })
        ));
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 4.0];
        let c1 = Array3::from_shape_vec((1, 3, 1), u.to_vec()).unwrap();
        let c2 = Array3::from_shape_vec((1, 2, 1), v.to_vec()).unwrap();
        let dense = TTTensor::new(vec![c1, c2])
            .unwrap()
            .materialize(100)
            .unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(dense[[i, j]], u[i] * v[j]);
            }
        }
    }

    #[test]
    fn empty_batch() {
        let t = TTTensor::random(&[3, 3], &[1, 2, 1], 0).unwrap();
        let batch = IndexBatch::new(Array2::zeros((0, 2)));
        assert!(t.eval_batch(&batch).unwrap().is_empty());
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let t = TTTensor::random(&[3, 3], &[1, 2, 1], 0).unwrap();
        let mut bytes = t.to_bytes();
        assert_eq!(TTTensor::from_bytes(&bytes).unwrap(), t);
        assert!(matches!(
            TTTensor::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            TTTensor::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn header_layout() {
        let t = TTTensor::random(&[3, 2], &[1, 2, 1], 0).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"TTJ1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        // first core header: (1, 3, 2)
        let dims: Vec<u32> = (0..3)
            .map(|j| u32::from_le_bytes(bytes[10 + 4 * j..14 + 4 * j].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![1, 3, 2]);
        let first = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
        assert_eq!(first, t.cores()[0][[0, 0, 0]]);
        assert_eq!(bytes.len(), 10 + 12 + 6 * 8 + 12 + 4 * 8);
    }
}
