//! Training configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! task = denoise
//! unrollings = 10
//! sigma_lo = 20
//! sigma_hi = 30
//! train_dir = data/train
//! ```
//!
//! Unknown keys, repeated keys and malformed values are rejected.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grad::LossKind;
use crate::model::{ModelConfig, Task, ThresholdMode};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Lower end of the training noise range (0–255 scale).
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    /// Learning-rate factor applied at every backtrack.
    pub backtrack_factor: f64,
    pub crop_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Validation (and checkpoint) interval in epochs.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_lo: 20.0,
            sigma_hi: 30.0,
            batch_size: 10,
            lr0: 1e-3,
            lr_decay: 0.95,
            lr_decay_every: 50,
            max_epochs: 6000,
            backtrack_factor: 0.8,
            crop_size: 128,
            loss: LossKind::Mse,
            seed: 0,
            val_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sigma_lo >= 0.0 && self.sigma_lo <= self.sigma_hi && self.sigma_hi.is_finite()) {
            return bad(format!("need 0 <= sigma_lo <= sigma_hi, got [{}, {}]", self.sigma_lo, self.sigma_hi));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 || self.val_every == 0 {
            return bad("lr_decay_every and val_every must be >= 1".into());
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad(format!("backtrack_factor must be in (0, 1), got {}", self.backtrack_factor));
        }
        if self.crop_size == 0 {
            return bad("crop_size must be >= 1".into());
        }
        Ok(())
    }

    /// Midpoint of the training range, used for validation.
    pub fn sigma_mid(&self) -> f64 {
        0.5 * (self.sigma_lo + self.sigma_hi)
    }
}

pub const DEFAULT_VAL_COUNT: usize = 5;

/// Everything a training run needs: model shape, optimizer settings and data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_dir: Option<PathBuf>,
    /// Separate validation images; when absent the last `val_count` training
    /// images are held out.
    pub val_dir: Option<PathBuf>,
    pub val_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                unrollings: 20,
                subbands: 32,
                filter_size: 7,
                stride: 1,
                channels: 1,
                task: Task::Denoise,
                threshold: ThresholdMode::Soft,
                adaptive: true,
            },
            train: TrainConfig::default(),
            train_dir: None,
            val_dir: None,
            val_count: DEFAULT_VAL_COUNT,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: bad value '{value}' for {key}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            let (m, t) = (&mut cfg.model, &mut cfg.train);
            match key {
                "unrollings" => m.unrollings = parse_value(key, value, line)?,
                "subbands" => m.subbands = parse_value(key, value, line)?,
                "filter_size" => m.filter_size = parse_value(key, value, line)?,
                "stride" => m.stride = parse_value(key, value, line)?,
                "channels" => m.channels = parse_value(key, value, line)?,
                "task" => m.task = parse_value(key, value, line)?,
                "threshold" => m.threshold = parse_value(key, value, line)?,
                "adaptive" => m.adaptive = parse_bool(key, value, line)?,
                "sigma_lo" => t.sigma_lo = parse_value(key, value, line)?,
                "sigma_hi" => t.sigma_hi = parse_value(key, value, line)?,
                "batch_size" => t.batch_size = parse_value(key, value, line)?,
                "lr0" => t.lr0 = parse_value(key, value, line)?,
                "lr_decay" => t.lr_decay = parse_value(key, value, line)?,
                "lr_decay_every" => t.lr_decay_every = parse_value(key, value, line)?,
                "max_epochs" => t.max_epochs = parse_value(key, value, line)?,
                "backtrack_factor" => t.backtrack_factor = parse_value(key, value, line)?,
                "crop_size" => t.crop_size = parse_value(key, value, line)?,
                "loss" => t.loss = parse_value(key, value, line)?,
                "seed" => t.seed = parse_value(key, value, line)?,
                "val_every" => t.val_every = parse_value(key, value, line)?,
                "train_dir" => cfg.train_dir = Some(PathBuf::from(value)),
                "val_dir" => cfg.val_dir = Some(PathBuf::from(value)),
                "val_count" => cfg.val_count = parse_value(key, value, line)?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {key}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut out = format!(
            "task = {}\nunrollings = {}\nsubbands = {}\nfilter_size = {}\nstride = {}\nchannels = {}\n\
             threshold = {}\nadaptive = {}\nsigma_lo = {}\nsigma_hi = {}\nbatch_size = {}\nlr0 = {}\n\
             lr_decay = {}\nlr_decay_every = {}\nmax_epochs = {}\nbacktrack_factor = {}\ncrop_size = {}\n\
             loss = {}\nseed = {}\nval_every = {}\nval_count = {}\n",
            m.task.as_str(),
            m.unrollings,
            m.subbands,
            m.filter_size,
            m.stride,
            m.channels,
            m.threshold.as_str(),
            m.adaptive,
            t.sigma_lo,
            t.sigma_hi,
            t.batch_size,
            t.lr0,
            t.lr_decay,
            t.lr_decay_every,
            t.max_epochs,
            t.backtrack_factor,
            t.crop_size,
            t.loss.as_str(),
            t.seed,
            t.val_every,
            self.val_count,
        );
        if let Some(d) = &self.train_dir {
            out.push_str(&format!("train_dir = {}\n", d.display()));
        }
        if let Some(d) = &self.val_dir {
            out.push_str(&format!("val_dir = {}\n", d.display()));
        }
        out
    }
}
