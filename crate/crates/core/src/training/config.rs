//! Training hyper-parameters and their `key = value` file mapping.

use std::path::Path;

use super::losses::{LossWeights, DEFAULT_ALPHA, DEFAULT_BCE_EPS, DEFAULT_BETA};
use super::optim::AdamParams;
use crate::error::{Error, Result};
use crate::formats::config::{self, Entry};
use crate::groundtruth::{KernelParams, REINFORCEMENT_THRESHOLD};
use crate::model::{UpsampleMode, WNetConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Side of the square training crop; a multiple of 16.
    pub crop_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha_mse: f64,
    pub beta_bce: f64,
    pub flip_prob: f64,
    pub epochs: usize,
    pub seed: u64,
    pub bce_clamp_eps: f64,
    pub adam: AdamParams,
    /// Write an intermediate checkpoint every this many epochs (0: only the
    /// final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            crop_size: 400,
            batch_size: 14,
            lr: 1e-4,
            weight_decay: 5e-3,
            alpha_mse: DEFAULT_ALPHA,
            beta_bce: DEFAULT_BETA,
            flip_prob: 0.5,
            epochs: 100,
            seed: 0,
            bce_clamp_eps: DEFAULT_BCE_EPS,
            adam: AdamParams::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// CPU-sized run for the eighth-width network on 128x128 scenes.
    pub fn desk() -> Self {
        TrainConfig {
            crop_size: 64,
            batch_size: 4,
            epochs: 15,
            ..TrainConfig::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha_mse,
            beta: self.beta_bce,
            bce_eps: self.bce_clamp_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config(reason));
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(16) {
            return bad(format!("crop_size must be a positive multiple of 16, got {}", self.crop_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        for (name, v) in [("alpha_mse", self.alpha_mse), ("beta_bce", self.beta_bce)] {
            if !positive(v) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        // lr = 0 and weight_decay = 0 are legitimate (frozen runs).
        for (name, v) in [("lr", self.lr), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.bce_clamp_eps > 0.0 && self.bce_clamp_eps < 0.5) {
            return bad(format!("bce_clamp_eps must lie in (0, 0.5), got {}", self.bce_clamp_eps));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        self.adam.validate()
    }
}

/// Everything a training run reads from its config file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub model: WNetConfig,
    pub train: TrainConfig,
    /// Density ground truth.
    pub kernel: KernelParams,
    /// Blur behind the reinforcement mask.
    pub reinforcement_kernel: KernelParams,
    pub reinforcement_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: WNetConfig::default(),
            train: TrainConfig::default(),
            kernel: KernelParams::default(),
            reinforcement_kernel: KernelParams::reinforcement(),
            reinforcement_threshold: REINFORCEMENT_THRESHOLD,
        }
    }
}

/// Every key accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "channel_scale",
    "upsample",
    "reinforcement",
    "input_channels",
    "crop_size",
    "batch_size",
    "lr",
    "weight_decay",
    "alpha_mse",
    "beta_bce",
    "flip_prob",
    "epochs",
    "seed",
    "bce_clamp_eps",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "checkpoint_every",
    "sigma",
    "window",
    "adaptive",
    "beta_adapt",
    "k_neighbors",
    "reinf_sigma",
    "reinf_window",
    "reinf_threshold",
];

impl RunConfig {
    /// Tiny network with the desk training schedule.
    pub fn desk() -> Self {
        RunConfig {
            model: WNetConfig::tiny(),
            train: TrainConfig::desk(),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.kernel.validate()?;
        self.reinforcement_kernel.validate()?;
        if !(self.reinforcement_threshold > 0.0 && self.reinforcement_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "reinf_threshold must be positive, got {}",
                self.reinforcement_threshold
            )));
        }
        Ok(())
    }

    /// Starts from `preset` (`full`, the default, or `desk`), then applies
    /// every other entry. Unknown keys are errors.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = match entries.iter().find(|e| e.key == "preset") {
            None => RunConfig::default(),
            Some(e) => match e.value.as_str() {
                "full" => RunConfig::default(),
                "desk" => RunConfig::desk(),
                other => return Err(Error::Config(format!("line {}: unknown preset `{other}`", e.line))),
            },
        };
        for e in entries {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        RunConfig::from_entries(&config::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_entries(&config::load(path)?)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let (m, t, k, r) = (&mut self.model, &mut self.train, &mut self.kernel, &mut self.reinforcement_kernel);
        match e.key.as_str() {
            "preset" => {}
            "channel_scale" => m.channel_scale = e.parse()?,
            "upsample" => m.upsample = e.value.parse::<UpsampleMode>()?,
            "reinforcement" => m.reinforcement_enabled = e.parse_bool()?,
            "input_channels" => m.input_channels = e.parse()?,
            "crop_size" => t.crop_size = e.parse()?,
            "batch_size" => t.batch_size = e.parse()?,
            "lr" => t.lr = e.parse()?,
            "weight_decay" => t.weight_decay = e.parse()?,
            "alpha_mse" => t.alpha_mse = e.parse()?,
            "beta_bce" => t.beta_bce = e.parse()?,
            "flip_prob" => t.flip_prob = e.parse()?,
            "epochs" => t.epochs = e.parse()?,
            "seed" => t.seed = e.parse()?,
            "bce_clamp_eps" => t.bce_clamp_eps = e.parse()?,
            "adam_beta1" => t.adam.beta1 = e.parse()?,
            "adam_beta2" => t.adam.beta2 = e.parse()?,
            "adam_eps" => t.adam.eps = e.parse()?,
            "checkpoint_every" => t.checkpoint_every = e.parse()?,
            "sigma" => k.sigma = e.parse()?,
            "window" => k.window = e.parse()?,
            "adaptive" => k.adaptive = e.parse_bool()?,
            "beta_adapt" => k.beta_adapt = e.parse()?,
            "k_neighbors" => k.k_neighbors = e.parse()?,
            "reinf_sigma" => r.sigma = e.parse()?,
            "reinf_window" => r.window = e.parse()?,
            "reinf_threshold" => self.reinforcement_threshold = e.parse()?,
            _ => return Err(e.unknown()),
        }
        Ok(())
    }

    /// Inverse of [`RunConfig::parse`] (without a preset line).
    pub fn to_text(&self) -> String {
        let (m, t, k, r) = (&self.model, &self.train, &self.kernel, &self.reinforcement_kernel);
        let lines = [
            ("channel_scale", m.channel_scale.to_string()),
            ("upsample", m.upsample.to_string()),
            ("reinforcement", m.reinforcement_enabled.to_string()),
            ("input_channels", m.input_channels.to_string()),
            ("crop_size", t.crop_size.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("alpha_mse", t.alpha_mse.to_string()),
            ("beta_bce", t.beta_bce.to_string()),
            ("flip_prob", t.flip_prob.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("bce_clamp_eps", t.bce_clamp_eps.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("sigma", k.sigma.to_string()),
            ("window", k.window.to_string()),
            ("adaptive", k.adaptive.to_string()),
            ("beta_adapt", k.beta_adapt.to_string()),
            ("k_neighbors", k.k_neighbors.to_string()),
            ("reinf_sigma", r.sigma.to_string()),
            ("reinf_window", r.window.to_string()),
            ("reinf_threshold", self.reinforcement_threshold.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
