use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::centers::UniformityConfig;
use crate::data::SceneConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SgdConfig};
use crate::schedule::ScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn tag(self) -> u64 {
        match self {
            Stage::Pretrain => 1,
            Stage::Finetune => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scene: SceneConfig,
    /// Training images (labeled + unlabeled).
    pub train_count: usize,
    pub validation_count: usize,
    pub labeled_ratio: f64,
    /// Dataset written by `gen-data`; generated in memory from `scene` when absent.
    pub path: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), train_count: 200, validation_count: 40, labeled_ratio: 0.1, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub labeled: usize,
    pub unlabeled: usize,
    /// Mined views `N` for the relational distributions.
    pub mined_views: usize,
    /// Noise added to every augmented view.
    pub augment_sigma: f64,
    /// Pixels drawn per class per image for the contrastive losses.
    pub pixels_per_class: usize,
    pub queries_per_class: usize,
    pub positives_per_anchor: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            labeled: 2,
            unlabeled: 2,
            mined_views: 4,
            augment_sigma: 0.02,
            pixels_per_class: 16,
            queries_per_class: 64,
            positives_per_anchor: 3,
        }
    }
}

/// Multipliers of each loss term in the stage objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub inst_global: f64,
    pub inst_local: f64,
    pub sup: f64,
    pub anco: f64,
    pub unsup: f64,
    pub aaco: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { inst_global: 1.0, inst_local: 1.0, sup: 1.0, anco: 1.0, unsup: 1.0, aaco: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Evaluate on the validation split every this many iterations (0 = only at the end).
    pub every: u64,
    /// Validation images used for alignment and feature statistics.
    pub feature_images: usize,
    pub alignment_pairs: usize,
    pub alignment_subsample: usize,
    /// Pixels per class per image used for D and E(g_f).
    pub feature_subsample: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { every: 100, feature_images: 8, alignment_pairs: 4, alignment_subsample: 256, feature_subsample: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: SgdConfig,
    pub batch: BatchConfig,
    pub pretrain_iters: u64,
    pub finetune_iters: u64,
    pub tau_s: ScheduleConfig,
    pub tau_an: ScheduleConfig,
    pub tau_sa: ScheduleConfig,
    /// When false the teacher-side relational distribution uses `tau_s.tau_plus`.
    pub teacher_follows_schedule: bool,
    pub lambda_a: f64,
    pub eta: f64,
    pub ema_decay: f64,
    pub confidence_threshold: f64,
    pub weights: LossWeights,
    pub uniformity: UniformityConfig,
    pub log_every: u64,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: SgdConfig::default(),
            batch: BatchConfig::default(),
            pretrain_iters: 1000,
            finetune_iters: 2000,
            tau_s: ScheduleConfig::default(),
            tau_an: ScheduleConfig::default(),
            tau_sa: ScheduleConfig::default(),
            teacher_follows_schedule: false,
            lambda_a: 0.2,
            eta: 0.1,
            ema_decay: 0.99,
            confidence_threshold: 0.75,
            weights: LossWeights::default(),
            uniformity: UniformityConfig::default(),
            log_every: 10,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.data.scene.validate()?;
        for s in [&self.tau_s, &self.tau_an, &self.tau_sa] {
            s.validate()?;
        }
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.model.num_classes != self.data.scene.num_classes {
            return bad("model.num_classes must equal data.scene.num_classes");
        }
        if self.data.scene.image_size % (1 << self.model.depth) != 0
            || self.data.scene.image_size % self.model.local_grid != 0
        {
            return bad("image_size must be divisible by 2^depth and by local_grid");
        }
        if self.data.train_count < 2 || !(self.data.labeled_ratio > 0.0 && self.data.labeled_ratio < 1.0) {
            return bad("need at least 2 training images and a labeled ratio in (0, 1)");
        }
        let b = &self.batch;
        if b.labeled == 0 || b.unlabeled == 0 || b.mined_views == 0 || b.pixels_per_class == 0 || b.queries_per_class == 0
        {
            return bad("batch sizes and sampling caps must be positive");
        }
        if !(b.augment_sigma >= 0.0) {
            return bad("augment_sigma must be non-negative");
        }
        if !(self.lambda_a >= 0.0) || !(self.eta > 0.0 && self.eta <= 1.0) || !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("need lambda_a ≥ 0, eta in (0, 1] and ema_decay in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must be in [0, 1]");
        }
        let w = &self.weights;
        if [w.inst_global, w.inst_local, w.sup, w.anco, w.unsup, w.aaco].iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return bad("loss weights must be finite and non-negative");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }
}
