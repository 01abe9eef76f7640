//! Run configuration: a flat TOML document with dotted section keys, e.g.
//!
//! ```toml
//! seed = 7
//! gardin.epochs = 20
//! gardin.distance = "l1+l2+ss"
//! alrec.learning_rate = 1e-3
//! ```
//!
//! Every key is optional; defaults reproduce the reference hyperparameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alrec::{AlrecTrainConfig, FocalLossParams};
use crate::dataset::synth::SynthConfig;
use crate::dataset::SamplingConfig;
use crate::error::{ensure, Error, Result};
use crate::gardin::GardinTrainConfig;
use crate::scoring::DEFAULT_SIGMA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Standard deviation of the temporal Gaussian, in frames.
    pub sigma: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset root holding `train/` and `test/`.
    pub dataset: PathBuf,
    /// Name recorded in the AUC report.
    pub dataset_name: String,
    /// Directory for checkpoints, logs, scores and manifests.
    pub out: PathBuf,
    pub synth: SynthConfig,
    pub sampling: SamplingConfig,
    pub gardin: GardinTrainConfig,
    pub alrec: AlrecTrainConfig,
    pub focal: FocalLossParams,
    pub scoring: ScoringConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: PathBuf::from("data/synthetic"),
            dataset_name: "synthetic".into(),
            out: PathBuf::from("runs/default"),
            synth: SynthConfig::default(),
            sampling: SamplingConfig::default(),
            gardin: GardinTrainConfig::default(),
            alrec: AlrecTrainConfig::default(),
            focal: FocalLossParams::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) | Error::Validation(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| {
            r.map_err(|e| match e {
                Error::Validation(m) => Error::Config(m),
                other => other,
            })
        };
        wrap(self.synth.validate())?;
        wrap(self.sampling.validate())?;
        wrap(self.gardin.validate())?;
        wrap(self.alrec.validate())?;
        wrap(self.focal.validate())?;
        wrap(ensure(self.scoring.sigma > 0.0 && self.scoring.sigma.is_finite(), || {
            "scoring.sigma must be > 0".into()
        }))?;
        wrap(ensure(self.sampling.region_size == self.gardin.generator.image_size, || {
            format!(
                "sampling.region_size {} differs from gardin.generator.image_size {}",
                self.sampling.region_size, self.gardin.generator.image_size
            )
        }))?;
        wrap(ensure(self.gardin.generator.image_size == self.gardin.discriminator.image_size, || {
            "gardin generator and discriminator image sizes differ".into()
        }))
    }

    /// The effective configuration as TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
