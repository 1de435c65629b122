//! Run configuration: one TOML file with a section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phenocast::data::SynthConfig;
use phenocast::embedding::EmbedConfig;
use phenocast::encoder::EncoderConfig;
use phenocast::eval::GridSpec;
use phenocast::model::ModelConfig;
use phenocast::sampling::{AugmentPolicy, WindowPolicy};
use phenocast::selftest::SelfTestConfig;
use phenocast::train::TrainConfig;

use crate::error::CliError;

/// Single-cell evaluation settings of the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub history: usize,
    pub horizon: usize,
    /// Lags of the linear baseline.
    pub linear_lags: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            history: 20,
            horizon: 2,
            linear_lags: 4,
        }
    }
}

/// Gradient check run before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTestSection {
    pub examples: usize,
    /// Entries checked per parameter tensor; 0 checks all of them.
    pub per_tensor: usize,
    /// Longest history of the check windows.
    pub max_history: usize,
    pub tolerance: f64,
}

impl Default for SelfTestSection {
    fn default() -> Self {
        Self {
            examples: 2,
            per_tensor: 12,
            max_history: 10,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    /// Optional plot-data export written next to grid reports.
    pub plot: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "archive.csv".into(),
            checkpoint: "model.ckpt".into(),
            metrics: "metrics.csv".into(),
            report: "report.csv".into(),
            plot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, initialisation, sampling and evaluation.
    pub seed: u64,
    /// Last year of the training period.
    pub split_year: i32,
    pub synth: SynthConfig,
    pub embed: EmbedConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    pub window: WindowPolicy,
    pub grid: GridSpec,
    pub eval: EvalSection,
    pub selftest: SelfTestSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1984,
            split_year: 2013,
            synth: SynthConfig::default(),
            embed: EmbedConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentPolicy::default(),
            window: WindowPolicy::default(),
            grid: GridSpec {
                patch_values: vec![1, 3, 5],
                ..GridSpec::default()
            },
            eval: EvalSection::default(),
            selftest: SelfTestSection::default(),
            paths: Paths::default(),
        }
    }
}

pub const PROFILES: [(&str, &str); 3] = [
    ("full", include_str!("../configs/full.toml")),
    ("desk", include_str!("../configs/desk.toml")),
    ("smoke", include_str!("../configs/smoke.toml")),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn profile(name: &str) -> Result<Self, CliError> {
        let (_, text) = PROFILES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Usage(format!("unknown profile {name:?}; known: full, desk, smoke")))?;
        Self::from_toml(text)
    }

    /// Checks every section and the constraints between them.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: phenocast::Error| CliError::Usage(e.to_string());
        self.synth.validate().map_err(usage)?;
        self.model().validate().map_err(usage)?;
        self.train_config().validate().map_err(usage)?;
        self.grid.validate().map_err(usage)?;
        if self.embed.patch_size != self.synth.patch_size {
            return Err(CliError::Usage(format!(
                "embed.patch_size = {} differs from synth.patch_size = {}",
                self.embed.patch_size, self.synth.patch_size
            )));
        }
        if let Some(p) = self.grid.patch_values.iter().find(|&&p| p > self.embed.patch_size) {
            return Err(CliError::Usage(format!(
                "grid.patch_values contains {p}, larger than embed.patch_size = {}",
                self.embed.patch_size
            )));
        }
        if self.split_year < self.synth.year_start || self.split_year >= self.synth.year_end {
            return Err(CliError::Usage(format!(
                "split_year = {} must lie in [synth.year_start, synth.year_end - 1]",
                self.split_year
            )));
        }
        if self.eval.horizon == 0 || self.eval.linear_lags == 0 {
            return Err(CliError::Usage("eval.horizon and eval.linear_lags must be positive".into()));
        }
        if self.selftest.examples == 0 || !(self.selftest.tolerance >= 0.0) {
            return Err(CliError::Usage(
                "selftest.examples must be positive and selftest.tolerance non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            embed: self.embed,
            encoder: self.encoder,
        }
    }

    /// Synthesis settings seeded from the run seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            augment: self.augment,
            window: self.window,
            seed: self.seed,
            ..self.train
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            seed: self.seed,
            ..self.grid.clone()
        }
    }

    pub fn selftest_config(&self) -> SelfTestConfig {
        SelfTestConfig {
            tolerance: self.selftest.tolerance,
            per_tensor: (self.selftest.per_tensor > 0).then_some(self.selftest.per_tensor),
            seed: self.seed,
            ..SelfTestConfig::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serialises")
    }

    /// Single-line form for artifact metadata.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run configuration serialises")
    }

    /// SHA-256 of the canonical TOML serialisation.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Short content hash identifying an archive file.
pub fn dataset_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}
