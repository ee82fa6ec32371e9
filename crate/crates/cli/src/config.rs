//! Run configuration: defaults, an optional TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;
pub const DEFAULT_PAIRS: usize = 10;
pub const DEFAULT_ENERGY: f64 = 0.99;
pub const DEFAULT_K: usize = 3;

/// ALS rank: fixed, or suggested by the rank probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankChoice {
    Fixed(usize),
    #[serde(with = "auto")]
    Auto,
}

mod auto {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected a rank or \"auto\", got {s:?}"
            )))
        }
    }
}

impl std::str::FromStr for RankChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(RankChoice::Auto);
        }
        s.parse::<usize>()
            .map(RankChoice::Fixed)
            .map_err(|_| format!("expected a rank or \"auto\", got {s:?}"))
    }
}

/// Optional keys accepted in the TOML file.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub d: Option<usize>,
    pub grid_size: Option<usize>,
    pub tail_mass: Option<f64>,
    pub sample_count: Option<usize>,
    pub generator: Option<PathBuf>,
    pub threads: Option<usize>,
    pub anova_order: Option<usize>,
    #[serde(default)]
    pub als: FileAls,
    #[serde(default)]
    pub fit: FileFit,
    #[serde(default)]
    pub probe: FileProbe,
    #[serde(default)]
    pub truncate: FileTruncate,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileAls {
    pub rank: Option<RankChoice>,
    pub sweeps: Option<usize>,
    pub ridge: Option<f64>,
    pub min_slice_samples: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileFit {
    pub holdout_fraction: Option<f64>,
    pub max_holdout_mse: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileProbe {
    pub pairs: Option<usize>,
    pub energy: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileTruncate {
    pub k: Option<usize>,
    pub fractions: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlsSettings {
    pub rank: Option<RankChoice>,
    pub sweeps: usize,
    pub ridge: Option<f64>,
    pub min_slice_samples: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub d: Option<usize>,
    pub grid_size: usize,
    pub tail_mass: f64,
    pub sample_count: usize,
    pub generator: Option<PathBuf>,
    #[serde(skip)]
    pub threads: Option<usize>,
    pub als: AlsSettings,
    pub holdout_fraction: f64,
    pub max_holdout_mse: Option<f64>,
    pub pairs: usize,
    pub energy: f64,
    pub k: usize,
    pub fractions: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            d: None,
            grid_size: ttjac_core::grid::DEFAULT_GRID_SIZE,
            tail_mass: ttjac_core::grid::DEFAULT_TAIL_MASS,
            sample_count: DEFAULT_SAMPLE_COUNT,
            generator: None,
            threads: None,
            als: AlsSettings {
                rank: None,
                sweeps: 10,
                ridge: None,
                min_slice_samples: None,
            },
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            max_holdout_mse: None,
            pairs: DEFAULT_PAIRS,
            energy: DEFAULT_ENERGY,
            k: DEFAULT_K,
            fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub d: Option<usize>,
    pub grid_size: Option<usize>,
    pub tail_mass: Option<f64>,
    pub sample_count: Option<usize>,
    pub generator: Option<PathBuf>,
    pub threads: Option<usize>,
    pub rank: Option<RankChoice>,
    pub sweeps: Option<usize>,
    pub ridge: Option<f64>,
    pub min_slice_samples: Option<usize>,
    pub holdout_fraction: Option<f64>,
    pub max_holdout_mse: Option<f64>,
    pub pairs: Option<usize>,
    pub energy: Option<f64>,
    pub k: Option<usize>,
    pub fractions: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn resolve(file: Option<&FileConfig>, flags: &Overrides) -> CliResult<Self> {
        let f = file.cloned().unwrap_or_default();
        if let Some(order) = f.anova_order {
            if order != 1 {
                return Err(CliError::Config(format!(
                    "only ANOVA order 1 is supported, got {order}"
                )));
            }
        }
        let base = RunConfig::default();
        let cfg = RunConfig {
            seed: flags.seed.or(f.seed).unwrap_or(base.seed),
            d: flags.d.or(f.d),
            grid_size: flags.grid_size.or(f.grid_size).unwrap_or(base.grid_size),
            tail_mass: flags.tail_mass.or(f.tail_mass).unwrap_or(base.tail_mass),
            sample_count: flags
                .sample_count
                .or(f.sample_count)
                .unwrap_or(base.sample_count),
            generator: flags.generator.clone().or(f.generator),
            threads: flags.threads.or(f.threads),
            als: AlsSettings {
                rank: flags.rank.or(f.als.rank),
                sweeps: flags.sweeps.or(f.als.sweeps).unwrap_or(base.als.sweeps),
                ridge: flags.ridge.or(f.als.ridge),
                min_slice_samples: flags.min_slice_samples.or(f.als.min_slice_samples),
            },
            holdout_fraction: flags
                .holdout_fraction
                .or(f.fit.holdout_fraction)
                .unwrap_or(base.holdout_fraction),
            max_holdout_mse: flags.max_holdout_mse.or(f.fit.max_holdout_mse),
            pairs: flags.pairs.or(f.probe.pairs).unwrap_or(base.pairs),
            energy: flags.energy.or(f.probe.energy).unwrap_or(base.energy),
            k: flags.k.or(f.truncate.k).unwrap_or(base.k),
            fractions: flags
                .fractions
                .clone()
                .or(f.truncate.fractions)
                .unwrap_or(base.fractions),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.grid_size < 2 || self.grid_size > u16::MAX as usize + 1 {
            return bad(format!(
                "grid_size must lie in [2, 65536], got {}",
                self.grid_size
            ));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass < 0.5) {
            return bad(format!(
                "tail_mass must lie in (0, 0.5), got {}",
                self.tail_mass
            ));
        }
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1".into());
        }
        if self.d == Some(0) {
            return bad("d must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.als.rank == Some(RankChoice::Fixed(0)) {
            return bad("ALS rank must be at least 1".into());
        }
        if self.als.sweeps == 0 {
            return bad("ALS sweeps must be at least 1".into());
        }
        if let Some(l) = self.als.ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("ridge must be finite and non-negative, got {l}"));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.pairs == 0 {
            return bad("probe pairs must be at least 1".into());
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) {
            return bad(format!("energy must lie in (0, 1], got {}", self.energy));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad(format!(
                "kept fractions must lie in (0, 1], got {:?}",
                self.fractions
            ));
        }
        Ok(())
    }

    /// Seed of a named sub-stream, so each stage draws independently of the others.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        first_u64(&h.finalize())
    }

    /// Hash of the settings that shape a fitted model.
    pub fn fit_hash(&self, rank: Option<usize>) -> u64 {
        #[derive(Serialize)]
        struct FitKey<'a> {
            seed: u64,
            rank: Option<usize>,
            als: &'a AlsSettings,
            holdout_fraction: f64,
        }
        let key = FitKey {
            seed: self.seed,
            rank,
            als: &self.als,
            holdout_fraction: self.holdout_fraction,
        };
        let json = serde_json::to_vec(&key).expect("plain data serializes");
        first_u64(&Sha256::digest(&json))
    }
}

fn first_u64(digest: &[u8]) -> u64 {
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
