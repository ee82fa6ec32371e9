//! Change-of-variables scoring of synthetic generators.
//!
//! For a latent `z ~ N(0, I_d)` and output features `f(G(z))`, the log-density
//! of the features is `log ρ(z) − Σ_i ln σ_i(J)` with `J = d f(G(z)) / dz`. The
//! Jacobian of the small networks used here is computed exactly by forward
//! accumulation through every layer.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::normal;
use crate::samples::SampleSet;

/// Default relative singular-value floor below which a Jacobian counts as degenerate.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected network; every layer but the last is followed by `activation`.
/// With `residual`, the input is added to the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl Mlp {
    /// Random network with `N(0, 1/fan_in)` weights and `N(0, 0.1²)` biases.
    pub fn random(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[1], w[0]), || {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    scale * x
                });
                let bias = Array1::from_shape_simple_fn(w[1], || {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    0.1 * x
                });
                Layer { weight, bias }
            })
            .collect();
        Ok(Mlp {
            layers,
            activation,
            residual: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.nrows() {
                return Err(Error::Config(format!(
                    "layer {l}: bias length {} for {} outputs",
                    layer.bias.len(),
                    layer.weight.nrows()
                )));
            }
            if l > 0 && layer.weight.ncols() != self.layers[l - 1].weight.nrows() {
                return Err(Error::Config(format!(
                    "layer {l} input size does not match previous output"
                )));
            }
            if layer
                .weight
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Config(format!(
                    "layer {l} has non-finite parameters"
                )));
            }
        }
        if self.residual && self.input_dim() != self.output_dim() {
            return Err(Error::Config(
                "residual network must preserve dimension".into(),
            ));
        }
        Ok(())
    }

    /// Output and Jacobian with respect to the input, given the Jacobian `jin` of the input.
    fn forward(&self, x: &[f64], jin: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut jac = jin.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &layer.weight;
            let mut pre: Vec<f64> = w
                .outer_iter()
                .zip(&layer.bias)
                .map(|(row, b)| row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>() + b)
                .collect();
            let w_mat = DMatrix::from_row_iterator(w.nrows(), w.ncols(), w.iter().copied());
            jac = w_mat * jac;
            if l < last {
                for (r, p) in pre.iter_mut().enumerate() {
                    let g = self.activation.derivative(*p);
                    jac.row_mut(r).scale_mut(g);
                    *p = self.activation.apply(*p);
                }
            }
            h = pre;
        }
        if self.residual {
            for (o, v) in h.iter_mut().zip(x) {
                *o += v;
            }
            jac += jin;
        }
        (h, jac)
    }
}

/// Synthetic differentiable generator `x = G(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `x = A z + b`.
    Affine {
        a: Array2<f64>,
        b: Array1<f64>,
    },
    Mlp(Mlp),
}

impl GeneratorSpec {
    pub fn identity(d: usize) -> Self {
        GeneratorSpec::Affine {
            a: Array2::eye(d),
            b: Array1::zeros(d),
        }
    }

    pub fn random_affine(d: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_simple_fn((n_out, d), || StandardNormal.sample(&mut rng));
        let b = Array1::from_shape_simple_fn(n_out, || StandardNormal.sample(&mut rng));
        GeneratorSpec::Affine { a, b }
    }

    pub fn random_mlp(
        d: usize,
        hidden: &[usize],
        n_out: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        Ok(GeneratorSpec::Mlp(Mlp::random(&sizes, activation, seed)?))
    }

    /// Latent dimension `d`.
    pub fn latent_dim(&self) -> usize {
        match self {
            GeneratorSpec::Affine { a, .. } => a.ncols(),
            GeneratorSpec::Mlp(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            GeneratorSpec::Affine { a, .. } => a.nrows(),
            GeneratorSpec::Mlp(m) => m.output_dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Affine { a, b } => {
                if a.nrows() != b.len() {
                    return Err(Error::Config(format!(
                        "affine offset has length {} for {} outputs",
                        b.len(),
                        a.nrows()
                    )));
                }
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Config(
                        "affine generator has non-finite parameters".into(),
                    ));
                }
            }
            GeneratorSpec::Mlp(m) => m.validate()?,
        }
        if self.latent_dim() == 0 || self.output_dim() < self.latent_dim() {
            return Err(Error::Config(format!(
                "generator maps {} latents to {} outputs; need n_out >= d >= 1",
                self.latent_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn forward(&self, z: &[f64], jin: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        match self {
            GeneratorSpec::Affine { a, b } => {
                let x = a
                    .outer_iter()
                    .zip(b)
                    .map(|(row, off)| row.iter().zip(z).map(|(p, q)| p * q).sum::<f64>() + off)
                    .collect();
                let a_mat = DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied());
                (x, a_mat * jin)
            }
            GeneratorSpec::Mlp(m) => m.forward(z, jin),
        }
    }
}

/// Feature extractor applied to generator outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMapSpec {
    Identity,
    /// `f(x) = P x`.
    RandomProjection {
        matrix: Array2<f64>,
    },
    MlpHead(Mlp),
}

impl FeatureMapSpec {
    pub fn random_projection(n_in: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n_in as f64).sqrt();
        let matrix = Array2::from_shape_simple_fn((output_dim, n_in), || {
            let x: f64 = StandardNormal.sample(&mut rng);
            scale * x
        });
        FeatureMapSpec::RandomProjection { matrix }
    }

    fn output_dim(&self, n_in: usize) -> usize {
        match self {
            FeatureMapSpec::Identity => n_in,
            FeatureMapSpec::RandomProjection { matrix } => matrix.nrows(),
            FeatureMapSpec::MlpHead(m) => m.output_dim(),
        }
    }

    fn validate(&self, n_in: usize, d: usize) -> Result<()> {
        match self {
            FeatureMapSpec::Identity => {}
            FeatureMapSpec::RandomProjection { matrix } => {
                if matrix.ncols() != n_in {
                    return Err(Error::Config(format!(
                        "projection expects {} inputs, generator emits {n_in}",
                        matrix.ncols()
                    )));
                }
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("projection has non-finite entries".into()));
                }
            }
            FeatureMapSpec::MlpHead(m) => {
                m.validate()?;
                if m.input_dim() != n_in {
                    return Err(Error::Config(format!(
                        "feature head expects {} inputs, generator emits {n_in}",
                        m.input_dim()
                    )));
                }
            }
        }
        if self.output_dim(n_in) < d {
            return Err(Error::Config(format!(
                "feature dimension {} below latent dimension {d}",
                self.output_dim(n_in)
            )));
        }
        Ok(())
    }

    fn forward(&self, x: Vec<f64>, jin: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        match self {
            FeatureMapSpec::Identity => (x, jin),
            FeatureMapSpec::RandomProjection { matrix } => {
                let y = matrix
                    .outer_iter()
                    .map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum())
                    .collect();
                let p = DMatrix::from_row_iterator(
                    matrix.nrows(),
                    matrix.ncols(),
                    matrix.iter().copied(),
                );
                (y, p * jin)
            }
            FeatureMapSpec::MlpHead(m) => m.forward(&x, &jin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResult {
    /// Natural-log density of the features.
    pub score: f64,
    pub log_prior: f64,
    /// `Σ ln σ_i(J)`.
    pub log_volume: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn default_features() -> FeatureMapSpec {
    FeatureMapSpec::Identity
}

/// Generator plus feature map: the function whose output density is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    #[serde(default)]
    pub tag: String,
    pub generator: GeneratorSpec,
    #[serde(default = "default_features")]
    pub features: FeatureMapSpec,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl Scorer {
    pub fn new(generator: GeneratorSpec, features: FeatureMapSpec) -> Result<Self> {
        let s = Scorer {
            tag: String::new(),
            generator,
            features,
            rank_tol: DEFAULT_RANK_TOL,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.features
            .validate(self.generator.output_dim(), self.generator.latent_dim())?;
        if !(self.rank_tol >= 0.0 && self.rank_tol < 1.0) {
            return Err(Error::Config(format!(
                "rank tolerance {} outside [0, 1)",
                self.rank_tol
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.output_dim(self.generator.output_dim())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent has {} components, generator expects {}",
                z.len(),
                self.latent_dim()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("latent is not finite".into()));
        }
        Ok(())
    }

    /// Features `f(G(z))` and their exact Jacobian (`n_feat x d`).
    pub fn features_and_jacobian(&self, z: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_latent(z)?;
        let eye = DMatrix::identity(z.len(), z.len());
        let (x, jx) = self.generator.forward(z, &eye);
        Ok(self.features.forward(x, jx))
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.features_and_jacobian(z).map(|(_, j)| j)
    }

    pub fn embed(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.features_and_jacobian(z).map(|(f, _)| f)
    }

    /// Central finite-difference Jacobian with step `1e-5 · (1 + ‖z‖∞)`.
    pub fn jacobian_fd(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_latent(z)?;
        let h = 1e-5 * (1.0 + z.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let d = z.len();
        let mut cols = Vec::with_capacity(d);
        let mut zp = z.to_vec();
        for j in 0..d {
            zp[j] = z[j] + h;
            let fp = self.embed(&zp)?;
            zp[j] = z[j] - h;
            let fm = self.embed(&zp)?;
            zp[j] = z[j];
            cols.push(
                fp.iter()
                    .zip(&fm)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect::<Vec<f64>>(),
            );
        }
        let n = cols[0].len();
        Ok(DMatrix::from_fn(n, d, |r, c| cols[c][r]))
    }

    pub fn score(&self, z: &[f64]) -> Result<ScoreResult> {
        let j = self.jacobian(z)?;
        let vol = log_volume(&j, self.rank_tol)?;
        let lp = log_prior(z);
        Ok(ScoreResult {
            score: lp - vol.log_volume,
            log_prior: lp,
            log_volume: vol.log_volume,
            sigma_min: vol.sigma_min,
            sigma_max: vol.sigma_max,
        })
    }

    /// Draws `m` latents from `N(0, I_d)`, scores them and quantizes them on `grid`.
    ///
    /// Sample `j` uses its own ChaCha stream `j` under `seed`, so results do not
    /// depend on how the work is split across threads.
    pub fn build_sample_set(&self, grid: &Grid1D, m: usize, seed: u64) -> Result<SampleSet> {
        if m == 0 {
            return Err(Error::Parameter("sample count must be at least 1".into()));
        }
        let d = self.latent_dim();
        let latents = draw_latents(m, d, seed);
        let scores: Vec<Result<f64>> = latents
            .outer_iter()
            .into_par_iter()
            .map(|z| {
                self.score(z.as_slice().expect("row-major"))
                    .map(|r| r.score)
            })
            .collect();
        let values = scores
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                r.map_err(|e| Error::Sample {
                    sample: j,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        SampleSet::new(latents, values, grid.clone(), self.tag.clone())
    }
}

/// `m x d` standard-normal latents; row `j` comes from ChaCha stream `j` under `seed`.
pub fn draw_latents(m: usize, d: usize, seed: u64) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    Array2::from_shape_vec((m, d), rows.into_iter().flatten().collect()).expect("m x d latents")
}

/// `log N(z; 0, I)` including the `−(d/2) ln 2π` constant.
pub fn log_prior(z: &[f64]) -> f64 {
    normal::log_pdf_std(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogVolume {
    pub log_volume: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// `Σ ln σ_i(J)` over the `d` singular values of an `n x d` Jacobian (`n ≥ d`).
pub fn log_volume(j: &DMatrix<f64>, rank_tol: f64) -> Result<LogVolume> {
    if j.nrows() < j.ncols() || j.ncols() == 0 {
        return Err(Error::Shape(format!(
            "Jacobian of shape {}x{} has fewer rows than columns",
            j.nrows(),
            j.ncols()
        )));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "Jacobian contains non-finite entries".into(),
        ));
    }
    let sv = j.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    if sigma_min.is_nan()
        || sigma_max.is_nan()
        || sigma_min <= rank_tol * sigma_max
        || sigma_min == 0.0
    {
        return Err(Error::DegenerateJacobian {
            sigma_min,
            sigma_max,
        });
    }
    Ok(LogVolume {
        log_volume: sv.iter().map(|s| s.ln()).sum(),
        sigma_min,
        sigma_max,
    })
}

/// Residual two-regime generator: `x = z + β w softplus((z_0 − c) / w) e_0`.
///
/// Latents with `z_0` well below `c` pass through unchanged; above `c` the first
/// output coordinate is stretched by `1 + β`, spreading those samples thinly over
/// a region a standard-normal reference does not cover.
pub fn stretched_tail_generator(
    d: usize,
    threshold: f64,
    width: f64,
    stretch: f64,
) -> Result<GeneratorSpec> {
    if d == 0 || width.is_nan() || width <= 0.0 || stretch.is_nan() || stretch < 0.0 {
        return Err(Error::Parameter(
            "stretched-tail generator needs d >= 1, width > 0, stretch >= 0".into(),
        ));
    }
    let mut w1 = Array2::zeros((1, d));
    w1[[0, 0]] = 1.0 / width;
    let hidden = Layer {
        weight: w1,
        bias: Array1::from_elem(1, -threshold / width),
    };
    let mut w2 = Array2::zeros((d, 1));
    w2[[0, 0]] = stretch * width;
    let out = Layer {
        weight: w2,
        bias: Array1::zeros(d),
    };
    Ok(GeneratorSpec::Mlp(Mlp {
        layers: vec![hidden, out],
        activation: Activation::Softplus,
        residual: true,
    }))
}
