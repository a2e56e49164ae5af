//! Run configuration: one TOML file with a section per command.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//!
//! [preprocess]
//! window = 32
//! magnitude = 8.0
//!
//! [train]
//! epochs = 20
//! learning_rate = 0.002
//!
//! [score.motion]
//! epsilon = 2.0
//! ```
//!
//! Every field is optional. Command-line flags override the file, which
//! overrides the defaults.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::bench::BenchSettings;
use crate::error::{Error, Result};
use crate::flowprep::PrepSettings;
use crate::gan::TrainingConfig;
use crate::scoring::{KernelSpec, MotionSettings, ScoreMode};
use crate::util::derive_seed;

/// Scoring section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub mode: ScoreMode,
    /// Fixed kernel; when absent the rbf median heuristic is fitted at
    /// calibration time.
    pub kernel: Option<KernelSpec>,
    /// Maximum size of the live reference distribution.
    pub reference_cap: usize,
    pub motion: MotionSettings,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Pixel,
            kernel: None,
            reference_cap: 10_000,
            motion: MotionSettings::default(),
        }
    }
}

impl ScoreSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        if self.reference_cap == 0 {
            return Err(Error::Config("reference_cap must be positive".into()));
        }
        self.motion.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for per-video work. Outputs do not depend on it.
    pub workers: usize,
    pub preprocess: PrepSettings,
    pub train: TrainingConfig,
    pub score: ScoreSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("livegan-out"),
            workers: 1,
            preprocess: PrepSettings::default(),
            train: TrainingConfig::default(),
            score: ScoreSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Load `path` if given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.preprocess.validate()?;
        self.train.validate()?;
        self.score.validate()
    }

    /// Stage seed derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Training settings with the seed taken from the global seed.
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.stage_seed("train"),
            ..self.train.clone()
        }
    }

    /// Benchmark settings with the seed taken from the global seed.
    pub fn benchmark(&self) -> BenchSettings {
        BenchSettings {
            seed: self.stage_seed("bench"),
            ..self.bench.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowprep::MagnitudeNorm;
    use crate::nn::OptimizerKind;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn sections_override_fields() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 9
            [preprocess]
            magnitude = "auto"
            stride = 16
            [train]
            epochs = 3
            [train.loss_weights]
            w_i = 10.0
            w_a = 0.0
            [score.motion]
            enabled = false
            [score.kernel]
            family = "linear"
            mixture_weights = [1.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.preprocess.magnitude, MagnitudeNorm::Auto);
        assert_eq!(cfg.preprocess.stride, 16);
        assert_eq!(cfg.preprocess.window, 32);
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.training().adversarial());
        assert!(!cfg.score.motion.enabled);
        assert_eq!(cfg.score.kernel, Some(KernelSpec::linear()));
        cfg.validate().unwrap();
    }

    #[test]
    fn full_example_parses() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            [preprocess]
            window = 32
            stride = 32
            magnitude = 8.0
            [train]
            epochs = 40
            learning_rate = 0.02
            batch_size = 64
            [train.architecture]
            encoder_filters = [64, 128, 256]
            discriminator_filters = [64, 128, 256]
            latent_dim = 100
            [score]
            mode = "pixel"
            [score.kernel]
            family = "linear"
            mixture_weights = [1.0]
            [score.motion]
            enabled = true
            n_pairs = 10
            epsilon = 2.0
            [bench]
            dataset = "mnist"
            [bench.train]
            epochs = 5
            [bench.train.optimizer]
            name = "sgd"
            momentum = 0.9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train, TrainingConfig::default());
        assert_eq!(cfg.preprocess.magnitude, MagnitudeNorm::Fixed(8.0));
        assert_eq!(cfg.bench.train.epochs, 5);
        assert_eq!(cfg.bench.train.architecture, TrainingConfig::desk().architecture);
        assert_eq!(cfg.bench.train.optimizer, OptimizerKind::Sgd { momentum: 0.9 });
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("sede = 1"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[train]\nepoch = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[bench.train]\nepoch = 1"),
            Err(Error::Config(_))
        ));
        let cfg = RunConfig::from_toml("[train]\nepochs = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            seed: 4,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn stage_seeds_follow_the_global_seed() {
        let a = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        let b = RunConfig {
            seed: 2,
            ..RunConfig::default()
        };
        assert_ne!(a.training().seed, b.training().seed);
        assert_ne!(a.stage_seed("train"), a.stage_seed("bench"));
        assert_eq!(a.training().seed, a.training().seed);
    }
}
