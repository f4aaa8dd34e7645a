//! On-disk run configuration (TOML) shared by the CLI commands, including
//! the five named system profiles.

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::loss::SystemConfig;
use crate::param::AdamConfig;
use crate::trainer::TrainOptions;

/// Complete training-run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// System profile 1..=5 (the module/weight matrix row).
    pub system: u8,
    /// Explicit override of the profile's loss weights [g, s, d].
    pub weights: Option<[f64; 3]>,
    pub steps: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout: f64,
    pub lambda_grl: f64,
    pub grad_clip: Option<f64>,
    pub non_saturating_gan: bool,
    pub freeze_generator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            system: 1,
            weights: None,
            steps: 100,
            seed: 0,
            batch_size: 32,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            dropout: 0.1,
            lambda_grl: 1.0,
            grad_clip: Some(1.0),
            non_saturating_gan: false,
            freeze_generator: false,
        }
    }
}

impl TrainConfig {
    pub fn system_config(&self) -> Result<SystemConfig> {
        let mut sys = SystemConfig::system(self.system)?;
        if let Some(w) = self.weights {
            sys.weights = w;
            sys.validate()?;
        }
        Ok(sys)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: 1e-8,
            },
            batch_size: self.batch_size,
            seed: self.seed,
            dropout: self.dropout,
            lambda_grl: self.lambda_grl,
            grad_clip: self.grad_clip,
            non_saturating_gan: self.non_saturating_gan,
            freeze_generator: self.freeze_generator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0,1)".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.lambda_grl < 0.0 {
            return Err(Error::Config("lambda_grl must be nonnegative".into()));
        }
        self.system_config()?;
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Corpus-generation config file: a thin TOML wrapper over `CorpusSpec`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(flatten)]
    pub spec: CorpusSpec,
}

impl CorpusConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: CorpusConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.spec.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
