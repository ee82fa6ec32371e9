//! Data-free density scoring of generator samples.
//!
//! Scores are log-densities of generated features obtained from the latent
//! prior and the singular values of the generator Jacobian. Because exact
//! scoring is expensive, scores are sampled once, discretized on an
//! equal-probability-mass latent grid, and compressed into a tensor train that
//! answers lookups with one chain of small matrix products.
//!
//! Module map:
//! - [`grid`]: equal-mass latent grid and quantization
//! - [`tt`]: tensor-train storage and evaluation
//! - [`fit`]: order-1 ANOVA and ALS fitting on scattered samples
//! - [`jac`]: generators, Jacobians and the change-of-variables score
//! - [`probe`]: rank estimation from pairwise dependency matrices
//! - [`harness`]: score versus latent-norm filtering with k-NN precision/recall
//! - [`model`]: the persisted, servable score model

pub mod error;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod jac;
pub mod model;
pub mod normal;
pub mod probe;
pub mod samples;
pub mod tt;

pub use error::{Error, ErrorKind, Result};
pub use fit::{AlsConfig, AlsReport, AnovaModel, Standardization};
pub use grid::{uniform_grid_mass_ratio, Grid1D, GridIndex};
pub use harness::{FilterCriterion, PrCurvePoint, TradeoffCurve};
pub use jac::{FeatureMapSpec, GeneratorSpec, ScoreResult, Scorer};
pub use model::{Provenance, ScoreModel};
pub use probe::{PairwiseMatrix, Spectrum};
pub use samples::SampleSet;
pub use tt::{IndexBatch, TTTensor};
