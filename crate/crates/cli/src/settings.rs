//! Resolved per-command settings: flag > config file > default.

use std::path::{Path, PathBuf};

use poselift::lifter::LiftConfig;
use poselift::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::TrainFlags;

pub const CACHE_ENV: &str = "POSE_LIFT_CACHE";

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".poselift-cache"))
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::ParseError { locus: p.display().to_string(), message: e.to_string() })
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub n: usize,
    pub bone_scale: f64,
    pub pose_variation: f64,
    pub seed: u64,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    pub lateral_mm: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub domain: String,
    pub id_prefix: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            n: 1000,
            bone_scale: 1.0,
            pose_variation: 0.3,
            seed: 0,
            depth_min_mm: 3000.0,
            depth_max_mm: 6000.0,
            lateral_mm: 300.0,
            image_width: 1000.0,
            image_height: 1000.0,
            domain: "adult".into(),
            id_prefix: "synth".into(),
        }
    }
}

impl SynthSettings {
    pub fn apply(&mut self, a: &crate::args::SynthArgs) {
        set(&mut self.n, a.n);
        set(&mut self.bone_scale, a.bone_scale);
        set(&mut self.pose_variation, a.pose_variation);
        set(&mut self.seed, a.common.seed);
        set(&mut self.domain, a.domain.clone());
        set(&mut self.id_prefix, a.id_prefix.clone());
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub groups: usize,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 5000, lr: 2e-4, batch: 5000, seed: 0, hidden_width: 1024, groups: 32, checkpoint_every: None }
    }
}

impl TrainSettings {
    pub fn apply(&mut self, f: &TrainFlags, seed: Option<u64>) {
        set(&mut self.epochs, f.epochs);
        set(&mut self.lr, f.lr);
        set(&mut self.batch, f.batch);
        set(&mut self.hidden_width, f.width);
        set(&mut self.groups, f.groups);
        set(&mut self.seed, seed);
        if f.checkpoint_every.is_some() {
            self.checkpoint_every = f.checkpoint_every;
        }
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> poselift::score_model::TrainConfig {
        poselift::score_model::TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: self.checkpoint_every.and(checkpoint_dir),
        }
    }

    pub fn model_config(&self) -> poselift::score_model::ModelConfig {
        poselift::score_model::ModelConfig::with_width(self.hidden_width, self.groups)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSettings {
    pub strategy: String,
    pub limit: Option<usize>,
    pub train: TrainSettings,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings { strategy: "ca".into(), limit: None, train: TrainSettings::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub count: usize,
    pub steps: usize,
    pub noise_start: f64,
    pub target_label: String,
    pub token_width: usize,
    pub train: TrainSettings,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            count: 600,
            steps: 100,
            noise_start: 0.6,
            target_label: poselift::augment::INFANT.into(),
            token_width: 1000,
            train: TrainSettings::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSettings {
    pub bins: usize,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings { bins: 20 }
    }
}

pub fn apply_lift(cfg: &mut LiftConfig, a: &crate::args::LiftArgs) {
    set(&mut cfg.iterations, a.iterations);
    set(&mut cfg.depth_freeze_until, a.depth_freeze_until);
    set(&mut cfg.init_steps, a.init_steps);
    set(&mut cfg.seed, a.common.seed);
    if a.label.is_some() {
        cfg.label = a.label.clone();
    }
}
