//! Run configuration: one TOML document per run, every field defaulted,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, ShiftSpec, SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::LrSchedule;
use crate::selection::Criteria;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub ablation: Ablation,
    pub baseline: BaselineConfig,
    pub paths: PathsConfig,
}

/// Synthetic benchmark parameters; also the split used when generating data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_common: usize,
    pub n_src_private: usize,
    pub n_tgt_private: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub rotation_angle: f64,
    pub translation_scale: f64,
    pub noise_std: f64,
    pub class_radius: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_common: 10,
            n_src_private: 5,
            n_tgt_private: 10,
            dim: 32,
            samples_per_class: 50,
            rotation_angle: 0.5,
            translation_scale: 0.3,
            noise_std: 0.25,
            class_radius: 1.0,
        }
    }
}

impl DataConfig {
    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.n_common, self.n_src_private, self.n_tgt_private)
    }

    pub fn synthetic(&self, seed: u64) -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            split: self.split()?,
            dim: self.dim,
            samples_per_class: self.samples_per_class,
            shift: ShiftSpec {
                rotation_angle: self.rotation_angle,
                translation_scale: self.translation_scale,
                noise_std: self.noise_std,
            },
            class_radius: self.class_radius,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub feature_activation: Activation,
    pub init_std: f64,
    pub init_margin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![128, 128],
            feature_dim: 64,
            feature_activation: Activation::None,
            init_std: 0.1,
            init_margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.015,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: LrSchedule::InverseDecay { gamma: 10.0, power: 0.75 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight `λ` on the open-space and split terms.
    pub lambda: f64,
    /// Threshold smoothing factor `α`.
    pub alpha: f64,
    /// Warm-up length `i_w`.
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            alpha: 0.99,
            warmup_iters: 200,
            total_iters: 1500,
            batch_size: 36,
            eval_interval: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub disable_split: bool,
    pub disable_warmup: bool,
    pub disable_consistency_criterion: bool,
    pub disable_threshold_criterion: bool,
    pub disable_entropy_weighting: bool,
}

impl Ablation {
    pub fn criteria(&self) -> Criteria {
        Criteria {
            threshold: !self.disable_threshold_criterion,
            consistency: !self.disable_consistency_criterion,
        }
    }
}

/// Source-only comparison model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Reject as unknown when the prediction entropy exceeds this fraction of `ln K`.
    pub entropy_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            entropy_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            ablation: Ablation::default(),
            baseline: BaselineConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde names the offending field in the message
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Normalized TOML rendering; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Warm-up length after applying the ablation switch.
    pub fn effective_warmup(&self) -> usize {
        if self.ablation.disable_warmup {
            0
        } else {
            self.train.warmup_iters
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_common == 0 {
            return Err(Error::config("data.n_common", "must be at least 1"));
        }
        if d.dim < 2 {
            return Err(Error::config("data.dim", "must be at least 2"));
        }
        if d.samples_per_class < 4 {
            return Err(Error::config("data.samples_per_class", "must be at least 4"));
        }
        if !d.rotation_angle.is_finite() {
            return Err(Error::config("data.rotation_angle", "must be finite"));
        }
        non_negative("data.translation_scale", d.translation_scale)?;
        non_negative("data.noise_std", d.noise_std)?;
        positive("data.class_radius", d.class_radius)?;

        let m = &self.model;
        if m.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        if m.feature_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be positive"));
        }
        positive("model.init_std", m.init_std)?;
        non_negative("model.init_margin", m.init_margin)?;

        let o = &self.optim;
        positive("optim.learning_rate", o.learning_rate)?;
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        non_negative("optim.weight_decay", o.weight_decay)?;
        if let LrSchedule::InverseDecay { gamma, power } = o.schedule {
            non_negative("optim.schedule.gamma", gamma)?;
            non_negative("optim.schedule.power", power)?;
        }

        let t = &self.train;
        non_negative("train.lambda", t.lambda)?;
        if !(t.alpha > 0.0 && t.alpha < 1.0) {
            return Err(Error::config("train.alpha", "must lie in (0, 1)"));
        }
        if t.total_iters == 0 {
            return Err(Error::config("train.total_iters", "must be positive"));
        }
        if t.warmup_iters == 0 && !self.ablation.disable_warmup {
            return Err(Error::config(
                "train.warmup_iters",
                "must be positive (use ablation.disable_warmup to skip warm-up)",
            ));
        }
        if t.warmup_iters > t.total_iters {
            return Err(Error::config("train.warmup_iters", "must not exceed train.total_iters"));
        }
        if t.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        if t.eval_interval == 0 {
            return Err(Error::config("train.eval_interval", "must be positive"));
        }
        self.augment.validate()?;
        positive("baseline.entropy_threshold", self.baseline.entropy_threshold)?;
        Ok(())
    }
}
