use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DEFAULT_ALPHA, DEFAULT_BETA};
use crate::nets::{DenoiserConfig, TranslatorConfig};

/// Stand-in for real camera noise: each image receives either spatially
/// correlated or signal-dependent noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Mixture,
    Correlated,
    SignalDependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealNoiseSpec {
    pub family: NoiseFamily,
    /// Uniform range of the correlated-noise level, 8-bit units.
    pub correlated_sigma: [f64; 2],
    /// Variance `a·x + b` of the signal-dependent noise.
    pub signal_a: f64,
    pub signal_b: f64,
}

impl Default for RealNoiseSpec {
    fn default() -> Self {
        RealNoiseSpec {
            family: NoiseFamily::Mixture,
            correlated_sigma: [8.0, 20.0],
            signal_a: 0.01,
            signal_b: (5.0f64 / 255.0).powi(2),
        }
    }
}

impl RealNoiseSpec {
    fn validate(&self, name: &str) -> Result<()> {
        let [lo, hi] = self.correlated_sigma;
        for (field, v) in [("correlated_sigma", lo), ("correlated_sigma", hi), ("signal_a", self.signal_a), ("signal_b", self.signal_b)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name}.{field} must be a finite value >= 0, got {v}")));
            }
        }
        if lo > hi {
            return Err(Error::invalid(format!("{name}.correlated_sigma lo > hi: {:?}", self.correlated_sigma)));
        }
        Ok(())
    }
}

/// Procedurally generated clean images used when no corpus directory is given.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpus {
    pub train_images: usize,
    pub test_images: usize,
    pub size: usize,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            train_images: 48,
            test_images: 20,
            size: 96,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub crop_size: usize,
    pub pretrain: PhaseSchedule,
    pub translator_train: PhaseSchedule,
    pub weight_decay: f64,
    /// Gaussian level used for denoiser pretraining, 8-bit units.
    pub pretrain_sigma: f64,
    /// Uniform range of the extra Gaussian added to translator inputs.
    pub augment_range: [f64; 2],
    pub alpha: f64,
    pub beta: f64,
    pub translator: TranslatorConfig,
    pub denoiser: DenoiserConfig,
    /// Stand-in real noise for translator training.
    pub real_noise: RealNoiseSpec,
    /// Stand-in real noise for the second half of each pretraining batch.
    pub pretrain_real_noise: RealNoiseSpec,
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub synthetic: SyntheticCorpus,
    /// Loss lines are logged every this many iterations (0 disables logging).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            crop_size: 64,
            pretrain: PhaseSchedule {
                iterations: 2000,
                batch_size: 8,
                lr_init: 1e-3,
                lr_final: 1e-7,
            },
            translator_train: PhaseSchedule {
                iterations: 1000,
                batch_size: 4,
                lr_init: 1e-3,
                lr_final: 1e-5,
            },
            weight_decay: 0.0,
            pretrain_sigma: 15.0,
            augment_range: [0.0, 15.0],
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            translator: TranslatorConfig::default(),
            denoiser: DenoiserConfig::default(),
            real_noise: RealNoiseSpec::default(),
            pretrain_real_noise: RealNoiseSpec {
                family: NoiseFamily::SignalDependent,
                ..RealNoiseSpec::default()
            },
            train_corpus: None,
            test_corpus: None,
            synthetic: SyntheticCorpus::default(),
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        let levels = [
            ("pretrain_sigma", self.pretrain_sigma),
            ("augment_range[0]", self.augment_range[0]),
            ("augment_range[1]", self.augment_range[1]),
            ("translator.sigma_tilde", self.translator.sigma_tilde),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in levels {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.augment_range[0] > self.augment_range[1] {
            return bad(format!("augment_range lo > hi: {:?}", self.augment_range));
        }
        self.real_noise.validate("real_noise")?;
        self.pretrain_real_noise.validate("pretrain_real_noise")?;
        for (name, p) in [("pretrain", self.pretrain), ("translator_train", self.translator_train)] {
            if p.batch_size == 0 {
                return bad(format!("{name}.batch_size must be >= 1"));
            }
            if !(p.lr_init > 0.0) || !(p.lr_final >= 0.0) || !p.lr_init.is_finite() {
                return bad(format!("{name} learning rates must be positive and finite"));
            }
        }
        if self.translator.channels != self.denoiser.channels {
            return bad(format!(
                "translator has {} channels but denoiser has {}",
                self.translator.channels, self.denoiser.channels
            ));
        }
        let m = lcm(1 << self.translator.depth, self.denoiser.unshuffle.max(1));
        if self.crop_size == 0 || self.crop_size % m != 0 {
            return bad(format!("crop_size {} must be a positive multiple of {m}", self.crop_size));
        }
        if self.synthetic.size < self.crop_size {
            return bad(format!(
                "synthetic.size {} is smaller than crop_size {}",
                self.synthetic.size, self.crop_size
            ));
        }
        Ok(())
    }

    /// Spatial multiple required by both networks.
    pub fn spatial_multiple(&self) -> usize {
        lcm(1 << self.translator.depth, self.denoiser.unshuffle.max(1))
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.pretrain_sigma, 15.0);
        assert_eq!(cfg.augment_range, [0.0, 15.0]);
        assert_eq!(cfg.translator.sigma_tilde, 100.0);
        assert_eq!((cfg.alpha, cfg.beta), (5e-2, 2e-3));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"seed": 7, "augment_range": [0, 5]}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.augment_range, [0.0, 5.0]);
        assert_eq!(cfg.crop_size, 64);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"sede": 7}"#).is_err());
    }

    #[test]
    fn rejects_bad_levels() {
        let mut cfg = TrainConfig {
            augment_range: [10.0, 5.0],
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.augment_range = [0.0, 15.0];
        cfg.pretrain_sigma = -1.0;
        assert!(cfg.validate().is_err());
        cfg.pretrain_sigma = 15.0;
        cfg.crop_size = 62;
        assert!(cfg.validate().is_err());
    }
}
