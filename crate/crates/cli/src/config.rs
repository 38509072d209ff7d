use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fbl_core::cnn_ae::{derive_config, AeConfig, CodeRate, TrainConfig, DEFAULT_KERNEL};
use fbl_core::harness::{AeTrainer, Scheme};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A full experiment: autoencoder, training recipe, evaluation point and
/// sweep grid. Every field has a default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of every random stream. `--seed` overrides it.
    pub seed: u64,
    /// Blocklength in complex channel uses.
    pub n: usize,
    /// Target frame error probability.
    pub epsilon: f64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub rcod: CodeRate,
    pub k_mod: usize,
    pub m1: usize,
    pub m2: usize,
    pub kernel: usize,
    /// `inf` trains without noise.
    pub train_snr_db: f64,
}

/// Training recipe; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub train_frames: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub snr_offset_db: f64,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub snr_db: f64,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub snrs_db: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub frames: u64,
    /// Autoencoder candidates above this rate are not trained.
    pub ae_max_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 128,
            epsilon: 1e-2,
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            rcod: CodeRate::new(1, 2).expect("valid"),
            k_mod: 2,
            m1: 50,
            m2: 20,
            kernel: DEFAULT_KERNEL,
            train_snr_db: 10.0,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            train_frames: d.train_frames,
            batch_size: d.batch_size,
            lr: d.lr,
            snr_offset_db: d.snr_offset_db,
            max_steps: d.max_steps,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            frames: 1_000_000,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            snrs_db: vec![6.0, 10.0, 14.0],
            schemes: vec![
                Scheme::Theory,
                Scheme::CnnAe,
                Scheme::PolarQam,
                Scheme::RmQam,
            ],
            frames: 1_000_000,
            ae_max_rate: None,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            bail!("epsilon {} outside (0, 0.5)", self.epsilon);
        }
        self.ae_config()?;
        self.train_config().validate()?;
        if self.sweep.snrs_db.iter().any(|s| !s.is_finite()) {
            bail!("sweep SNRs must be finite");
        }
        Ok(())
    }

    pub fn ae_config(&self) -> Result<AeConfig> {
        let m = &self.model;
        let rate = m.rcod.value() * m.k_mod as f64;
        Ok(
            derive_config(self.n, rate, m.rcod, m.k_mod, m.m1, m.m2, m.kernel)?
                .with_train_snr(m.train_snr_db)
                .with_seed(self.seed),
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            train_frames: t.train_frames,
            batch_size: t.batch_size,
            lr: t.lr,
            snr_offset_db: t.snr_offset_db,
            max_steps: t.max_steps,
            seed: self.seed,
        }
    }

    pub fn trainer(&self) -> AeTrainer {
        AeTrainer {
            m1: self.model.m1,
            m2: self.model.m2,
            kernel: self.model.kernel,
            train: self.train_config(),
        }
    }

    /// SHA-256 of the resolved configuration, as hex.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Parses `start:stop:step` (inclusive), a comma list, or a single value.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        bail!("empty SNR list");
    }
    let num = |t: &str| -> Result<f64> {
        let v: f64 = t
            .trim()
            .parse()
            .with_context(|| format!("bad SNR value {t:?}"))?;
        if !v.is_finite() {
            bail!("SNR {t:?} is not finite");
        }
        Ok(v)
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0) || b < a {
                bail!("SNR range {s:?} needs start <= stop and a positive step");
            }
            let count = ((b - a) / h + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * h).collect())
        }
        [_] => s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()
            .and_then(|v| {
                if v.is_empty() {
                    bail!("empty SNR list")
                }
                Ok(v)
            }),
        _ => bail!("SNR grid {s:?} is neither start:stop:step nor a comma list"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let g = parse_snr_grid("0:20:1").unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[20]), (0.0, 20.0));
        assert_eq!(parse_snr_grid("6, 10,14").unwrap(), vec![6.0, 10.0, 14.0]);
        assert_eq!(parse_snr_grid("0:1:0.25").unwrap().len(), 5);
        for bad in ["", " , ", "1:0:1", "0:1:0", "a", "1:2", "inf"] {
            assert!(parse_snr_grid(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn defaults_are_valid_and_unknown_keys_rejected() {
        ExperimentConfig::default().validate().unwrap();
        let cfg: ExperimentConfig =
            toml::from_str("seed = 3\n[model]\nrcod = \"1/4\"\nk_mod = 4\n").unwrap();
        assert_eq!(cfg.ae_config().unwrap().k, 128);
        assert!(toml::from_str::<ExperimentConfig>("sede = 3").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[train]\nseed = 3").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn infinite_training_snr_parses() {
        let cfg: ExperimentConfig = toml::from_str("[model]\ntrain_snr_db = inf\n").unwrap();
        assert!(cfg.model.train_snr_db.is_infinite());
        assert!(cfg.hash().len() == 64);
    }
}
