//! Datasets, batch sampling, ADAM with projection, the learning-rate
//! schedule, PSNR backtracking and the epoch loop.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::CheckpointRecord;
use crate::config::{RunConfig, TrainConfig};
use crate::error::{invalid, shape, Error, Result};
use crate::grad::{mcsure_value_and_grad, mse_value_and_grad, GradientSet, LossKind, Observation};
use crate::image::{apply_mask, awgn, make_bayer_mask, psnr, rng_from_seed, Image, MaskSignal};
use crate::io::{list_images, read_image};
use crate::model::{init_params, observed_means, ModelConfig, ModelParams, Task};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Validation PSNR drop (dB below the best so far) that counts as divergence.
pub const BACKTRACK_DROP_DB: f64 = 0.5;

/// Derives an independent stream seed from a base seed and a tag.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetRole {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub flips: bool,
    /// Rotations by multiples of 90°.
    pub rotations: bool,
}

impl Augmentation {
    pub const ALL: Augmentation = Augmentation { flips: true, rotations: true };
    pub const NONE: Augmentation = Augmentation { flips: false, rotations: false };
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: Option<PathBuf>,
    pub role: DatasetRole,
    pub augmentation: Augmentation,
    images: Vec<Image>,
    names: Vec<String>,
}

impl Dataset {
    /// In-memory dataset; `names` default to `img000`, `img001`, ….
    pub fn from_images(images: Vec<Image>, role: DatasetRole) -> Result<Self> {
        if images.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        let names = (0..images.len()).map(|k| format!("img{k:03}")).collect();
        let augmentation = if role == DatasetRole::Train { Augmentation::ALL } else { Augmentation::NONE };
        Ok(Self { source: None, role, augmentation, images, names })
    }

    /// Every readable image in `dir`, converted to `channels` channels.
    pub fn from_dir(dir: impl AsRef<Path>, role: DatasetRole, channels: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let paths = list_images(dir)?;
        if paths.is_empty() {
            return Err(Error::Dataset { path: dir.to_path_buf(), msg: "no images found".into() });
        }
        let mut images = Vec::with_capacity(paths.len());
        let mut names = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = read_image(p)?;
            images.push(if channels == 1 { img.to_gray() } else { img.to_rgb() });
            names.push(p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        }
        let mut ds = Self::from_images(images, role)?;
        ds.names = names;
        ds.source = Some(dir.to_path_buf());
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    /// Moves the last `count` images into a second dataset with `role`.
    pub fn split_off(&mut self, count: usize, role: DatasetRole) -> Result<Dataset> {
        if count == 0 || count >= self.images.len() {
            return Err(invalid(format!("cannot hold out {count} of {} images", self.images.len())));
        }
        let at = self.images.len() - count;
        let images = self.images.split_off(at);
        let names = self.names.split_off(at);
        let mut held = Dataset::from_images(images, role)?;
        held.names = names;
        held.source = self.source.clone();
        Ok(held)
    }

    fn check_crop(&self, crop: usize) -> Result<()> {
        for (img, name) in self.images.iter().zip(&self.names) {
            if img.height() < crop || img.width() < crop {
                return Err(Error::Dataset {
                    path: self.source.clone().unwrap_or_default(),
                    msg: format!("{name} is {}x{}, smaller than the {crop} crop", img.height(), img.width()),
                });
            }
        }
        Ok(())
    }
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Mean-subtracted observation (masked for demosaicing).
    pub y: Image,
    /// Clean target with the same offsets removed. Not read by MC-SURE.
    pub x: Image,
    pub sigma: f64,
    pub mask: Option<MaskSignal>,
}

impl Sample {
    pub fn observation(&self) -> Observation {
        Observation { y: self.y.clone(), mask: self.mask.clone(), sigma: self.sigma }
    }
}

fn augment(mut x: Image, aug: Augmentation, rng: &mut crate::image::Rng) -> Image {
    if aug.flips {
        if rng.gen::<bool>() {
            x = x.flip_horizontal();
        }
        if rng.gen::<bool>() {
            x = x.flip_vertical();
        }
    }
    if aug.rotations {
        for _ in 0..rng.gen_range(0..4) {
            x = x.rot90();
        }
    }
    x
}

/// Builds a sample from a clean image: crop, augmentation, noise, optional
/// mosaic, and per-image mean subtraction.
pub fn make_sample(clean: &Image, cfg: &TrainConfig, task: Task, aug: Augmentation, seed: u64) -> Result<Sample> {
    let mut rng = rng_from_seed(seed);
    let crop = cfg.crop_size;
    if clean.height() < crop || clean.width() < crop {
        return Err(invalid(format!("crop {crop} exceeds image {}x{}", clean.height(), clean.width())));
    }
    let top = rng.gen_range(0..=clean.height() - crop);
    let left = rng.gen_range(0..=clean.width() - crop);
    let x = augment(clean.crop(top, left, crop, crop)?, aug, &mut rng);
    let sigma = if cfg.sigma_hi > cfg.sigma_lo { rng.gen_range(cfg.sigma_lo..=cfg.sigma_hi) } else { cfg.sigma_lo };
    let noisy = awgn(&x, sigma, rng.gen())?;
    let (mut y, mask) = match task {
        Task::Denoise => (noisy, None),
        Task::Jdd => {
            let m = make_bayer_mask(crop, crop)?;
            (apply_mask(&m, &noisy)?, Some(m))
        }
    };
    let means = match &mask {
        None => y.channel_means(),
        Some(m) => observed_means(&y, m),
    };
    y.subtract_offsets(&means, mask.as_ref());
    let mut x = x;
    x.subtract_offsets(&means, None);
    Ok(Sample { y, x, sigma, mask })
}

/// `batch_size` samples from images drawn uniformly with replacement.
pub fn sample_batch(ds: &Dataset, cfg: &TrainConfig, task: Task, seed: u64) -> Result<Vec<Sample>> {
    if ds.role != DatasetRole::Train {
        return Err(invalid("batches are drawn from training datasets only"));
    }
    ds.check_crop(cfg.crop_size)?;
    let mut rng = rng_from_seed(seed);
    (0..cfg.batch_size)
        .map(|_| {
            let idx = rng.gen_range(0..ds.len());
            make_sample(&ds.images[idx], cfg, task, ds.augmentation, rng.gen())
        })
        .collect()
}

/// Mean loss and mean gradient over a batch.
pub fn batch_value_and_grad(
    theta: &ModelParams,
    batch: &[Sample],
    loss: LossKind,
    seed: u64,
) -> Result<(f64, GradientSet)> {
    let mut total = GradientSet::zeros_for(theta);
    let mut value = 0.0;
    for (k, s) in batch.iter().enumerate() {
        let obs = s.observation();
        let (report, g) = match loss {
            LossKind::Mse => mse_value_and_grad(theta, &obs, &s.x)?,
            LossKind::McSure => mcsure_value_and_grad(theta, &obs, mix_seed(seed, k as u64))?,
        };
        value += report.value;
        total.add_assign(&g);
    }
    let n = batch.len().max(1) as f64;
    total.scale(1.0 / n);
    Ok((value / n, total))
}

/// First and second moment estimates, laid out like [`ModelParams::param_slices`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(theta: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = theta.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn matches(&self, theta: &ModelParams) -> bool {
        let slices = theta.param_slices();
        self.m.len() == slices.len()
            && self.v.len() == slices.len()
            && slices.iter().zip(&self.m).zip(&self.v).all(|((p, m), v)| p.len() == m.len() && p.len() == v.len())
    }
}

/// One ADAM update followed by constraint projection.
///
/// Non-finite gradients abort the step and leave `theta` and `state` as they
/// were. For non-adaptive models the `τ₁` gradient is ignored.
pub fn adam_step(theta: &mut ModelParams, grads: &GradientSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !state.matches(theta) {
        return Err(shape("optimizer state does not match the parameters"));
    }
    let g_slices = grads.slices();
    if g_slices.len() != state.m.len() || g_slices.iter().zip(&state.m).any(|(g, m)| g.len() != m.len()) {
        return Err(shape("gradient does not match the parameters"));
    }
    if let Some(idx) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient entry {idx} is not finite")));
    }
    let names = theta.param_names();
    let adaptive = theta.config.adaptive;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
    for (gi, p) in theta.param_slices_mut().into_iter().enumerate() {
        if !adaptive && names[gi].ends_with("tau1") {
            continue;
        }
        let (m, v) = (&mut state.m[gi], &mut state.v[gi]);
        for (((p, &g), m), v) in p.iter_mut().zip(g_slices[gi]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
    theta.project_constraints();
    Ok(())
}

/// `lr0 · decay^⌊epoch / every⌋ · backtrack_factor^backtracks`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig, backtracks: u32) -> f64 {
    let decays = (epoch / cfg.lr_decay_every) as i32;
    cfg.lr0 * cfg.lr_decay.powi(decays) * cfg.backtrack_factor.powi(backtracks as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Keep going and store the current state as the newest checkpoint.
    Save,
    /// Go back to the newest checkpoint and shrink the learning rate.
    Restore,
}

/// Decides what to do after a validation: the newest entry of `history` is
/// compared with the best earlier one.
pub fn maybe_backtrack(history: &[f64], have_checkpoint: bool) -> Result<Action> {
    let Some((&latest, earlier)) = history.split_last() else {
        return Err(invalid("no validation result to act on"));
    };
    let best = earlier.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if latest < best - BACKTRACK_DROP_DB {
        if !have_checkpoint {
            return Err(Error::MissingCache("no checkpoint to backtrack to".into()));
        }
        Ok(Action::Restore)
    } else {
        Ok(Action::Save)
    }
}

/// Fixed noisy copies of the validation images (same noise every time).
pub struct ValidationSet {
    pub clean: Vec<Image>,
    pub noisy: Vec<Image>,
    pub masks: Vec<Option<MaskSignal>>,
    pub sigma: f64,
}

impl ValidationSet {
    pub fn new(ds: &Dataset, task: Task, sigma: f64, seed: u64) -> Result<Self> {
        let mut out = ValidationSet { clean: vec![], noisy: vec![], masks: vec![], sigma };
        for (k, x) in ds.images().iter().enumerate() {
            let y = awgn(x, sigma, mix_seed(seed, k as u64))?;
            let (y, m) = match task {
                Task::Denoise => (y, None),
                Task::Jdd => {
                    let m = make_bayer_mask(x.height(), x.width())?;
                    (apply_mask(&m, &y)?, Some(m))
                }
            };
            out.clean.push(x.clone());
            out.noisy.push(y);
            out.masks.push(m);
        }
        Ok(out)
    }

    /// Mean PSNR of the model's reconstructions.
    pub fn mean_psnr(&self, theta: &ModelParams) -> Result<f64> {
        let mut total = 0.0;
        for ((x, y), m) in self.clean.iter().zip(&self.noisy).zip(&self.masks) {
            let out = match m {
                None => theta.denoise(y, self.sigma)?,
                Some(m) => theta.demosaic(y, m, self.sigma)?,
            };
            total += psnr(x, &out)?;
        }
        Ok(total / self.clean.len() as f64)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub lr: f64,
    pub backtracks: u32,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "epoch,loss,val_psnr,lr,backtracks";

    pub fn to_csv(&self) -> String {
        let val = self.val_psnr.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!("{},{:.9e},{},{:.6e},{}", self.epoch, self.loss, val, self.lr, self.backtracks)
    }
}

pub struct TrainRun {
    pub record: CheckpointRecord,
    pub log: Vec<LogRow>,
}

/// Trains from a fresh initialization; see [`train_with`].
pub fn train(cfg: &TrainConfig, model: ModelConfig, train_ds: &Dataset, val_ds: &Dataset) -> Result<TrainRun> {
    train_with(cfg, model, train_ds, val_ds, |_| {})
}

/// Runs the epoch loop, calling `on_epoch` with every log row as it is made.
///
/// An epoch is `⌈images / batch_size⌉` batches. Validation and checkpointing
/// happen every `val_every` epochs and after the last one.
pub fn train_with(
    cfg: &TrainConfig,
    model: ModelConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainRun> {
    cfg.validate()?;
    model.validate()?;
    train_ds.check_crop(cfg.crop_size)?;
    if train_ds.channels() != model.channels || val_ds.channels() != model.channels {
        return Err(shape(format!("model has {} channels, data has {}", model.channels, train_ds.channels())));
    }
    let mut theta = init_params(model, cfg.seed)?;
    let mut adam = AdamState::new(&theta);
    let mut record = CheckpointRecord::new(theta.clone(), adam.clone(), *cfg);
    let mut log = Vec::new();
    if cfg.max_epochs == 0 {
        return Ok(TrainRun { record, log });
    }
    let val = ValidationSet::new(val_ds, model.task, cfg.sigma_mid(), mix_seed(cfg.seed, u64::MAX))?;
    let batches = train_ds.len().div_ceil(cfg.batch_size);
    let mut history: Vec<f64> = Vec::new();
    let mut backtracks = 0u32;
    let mut have_checkpoint = false;
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg, backtracks);
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        order.shuffle(&mut rng_from_seed(epoch_seed));
        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let batch_seed = mix_seed(epoch_seed, b as u64 + 1);
            let mut rng = rng_from_seed(batch_seed);
            let batch: Vec<Sample> = (0..cfg.batch_size)
                .map(|k| {
                    let idx = order[(b * cfg.batch_size + k) % order.len()];
                    make_sample(&train_ds.images[idx], cfg, model.task, train_ds.augmentation, rng.gen())
                })
                .collect::<Result<_>>()?;
            let (value, grads) = batch_value_and_grad(&theta, &batch, cfg.loss, rng.gen())?;
            adam_step(&mut theta, &grads, &mut adam, lr)?;
            epoch_loss += value;
        }
        let done = epoch + 1;
        let mut row = LogRow { epoch: done, loss: epoch_loss / batches as f64, val_psnr: None, lr, backtracks };
        if done % cfg.val_every == 0 || done == cfg.max_epochs {
            let p = val.mean_psnr(&theta)?;
            row.val_psnr = Some(p);
            history.push(p);
            match maybe_backtrack(&history, have_checkpoint)? {
                Action::Save => {
                    record.model = theta.clone();
                    record.adam = adam.clone();
                    record.epoch = done;
                    record.lr = lr;
                    have_checkpoint = true;
                }
                Action::Restore => {
                    info!("epoch {done}: validation PSNR {p:.3} dB diverged, restoring epoch {}", record.epoch);
                    theta = record.model.clone();
                    adam = record.adam.clone();
                    backtracks += 1;
                }
            }
            record.val_history = history.clone();
            record.backtracks = backtracks;
            debug!("epoch {done}: loss {:.4e} val {p:.3} dB", row.loss);
        }
        on_epoch(&row);
        log.push(row);
    }
    Ok(TrainRun { record, log })
}

/// Loads the datasets a [`RunConfig`] points at: `val_dir` if given,
/// otherwise the last `val_count` training images.
pub fn load_datasets(run: &RunConfig) -> Result<(Dataset, Dataset)> {
    let dir = run
        .train_dir
        .as_ref()
        .ok_or_else(|| Error::Config("train_dir is not set".into()))?;
    if !dir.is_dir() {
        return Err(Error::Dataset { path: dir.clone(), msg: "not a directory".into() });
    }
    let mut train_ds = Dataset::from_dir(dir, DatasetRole::Train, run.model.channels)?;
    let val_ds = match &run.val_dir {
        Some(v) => Dataset::from_dir(v, DatasetRole::Validation, run.model.channels)?,
        None => train_ds.split_off(run.val_count, DatasetRole::Validation)?,
    };
    Ok((train_ds, val_ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ThresholdMode;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            unrollings: 2,
            subbands: 3,
            filter_size: 3,
            stride: 1,
            channels: 1,
            task: Task::Denoise,
            threshold: ThresholdMode::Soft,
            adaptive: true,
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg, 0), 1e-3);
        assert!((lr_schedule(50, &cfg, 0) - 9.5e-4).abs() < 1e-15);
        assert!((lr_schedule(100, &cfg, 0) - 9.025e-4).abs() < 1e-15);
        assert!((lr_schedule(0, &cfg, 2) - 0.64e-3).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 0..400 {
            let lr = lr_schedule(e, &cfg, 1);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn backtrack_rule() {
        assert_eq!(maybe_backtrack(&[20.0], false).unwrap(), Action::Save);
        assert_eq!(maybe_backtrack(&[20.0, 21.0, 22.0], true).unwrap(), Action::Save);
        assert_eq!(maybe_backtrack(&[20.0, 22.0, 21.0], true).unwrap(), Action::Restore);
        assert_eq!(maybe_backtrack(&[22.0, 21.6], true).unwrap(), Action::Save);
        assert!(maybe_backtrack(&[22.0, 21.0], false).is_err());
        assert!(maybe_backtrack(&[], true).is_err());
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut theta = init_params(tiny_model(), 1).unwrap();
        theta.dict.scale(0.5);
        let before = theta.clone();
        let mut state = AdamState::new(&theta);
        let mut g = GradientSet::zeros_for(&theta);
        g.dict.weights_mut()[0] = 1.0;
        adam_step(&mut theta, &g, &mut state, 1e-3).unwrap();
        let expected = before.dict.weights()[0] - 1e-3 * 1.0 / (1.0 + ADAM_EPS);
        assert!((theta.dict.weights()[0] - expected).abs() < 1e-15);
        assert_eq!(theta.dict.weights()[1..], before.dict.weights()[1..]);
        assert_eq!(theta.layers, before.layers);
    }

    #[test]
    fn adam_zero_gradient_is_identity_and_rejects_nan() {
        let mut theta = init_params(tiny_model(), 1).unwrap();
        let before = theta.clone();
        let mut state = AdamState::new(&theta);
        let zero = GradientSet::zeros_for(&theta);
        adam_step(&mut theta, &zero, &mut state, 1e-3).unwrap();
        assert_eq!(theta, before);
        let mut g = GradientSet::zeros_for(&theta);
        g.layers[0].tau0[1] = f64::NAN;
        let snapshot = state.clone();
        assert!(matches!(adam_step(&mut theta, &g, &mut state, 1e-3), Err(Error::NonFinite(_))));
        assert_eq!(state, snapshot);
        assert_eq!(theta, before);
    }

    #[test]
    fn non_adaptive_keeps_tau1_at_zero() {
        let mut theta = init_params(ModelConfig { adaptive: false, ..tiny_model() }, 2).unwrap();
        let mut state = AdamState::new(&theta);
        let mut g = GradientSet::zeros_for(&theta);
        g.layers[0].tau1.iter_mut().for_each(|v| *v = -5.0);
        g.layers[1].tau0.iter_mut().for_each(|v| *v = 3.0);
        adam_step(&mut theta, &g, &mut state, 0.1).unwrap();
        assert!(theta.layers.iter().all(|l| l.tau1.iter().all(|&t| t == 0.0)));
        assert!(theta.layers[1].tau0.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let imgs = crate::synth::synth_set(3, 20, 24, 3, 5).unwrap();
        let ds = Dataset::from_images(imgs, DatasetRole::Train).unwrap();
        let cfg = TrainConfig { crop_size: 12, batch_size: 4, sigma_lo: 25.0, sigma_hi: 25.0, ..Default::default() };
        let a = sample_batch(&ds, &cfg, Task::Jdd, 9).unwrap();
        assert_eq!(a, sample_batch(&ds, &cfg, Task::Jdd, 9).unwrap());
        assert_ne!(a, sample_batch(&ds, &cfg, Task::Jdd, 10).unwrap());
        for s in &a {
            assert_eq!(s.sigma, 25.0);
            assert_eq!(s.y.dims(), (12, 12, 3));
            let m = s.mask.as_ref().unwrap();
            // unobserved samples stay exactly zero after mean subtraction
            for c in 0..3 {
                for (v, &b) in s.y.plane(c).iter().zip(m.plane(c)) {
                    if b == 0 {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
        let big = TrainConfig { crop_size: 21, ..cfg };
        assert!(sample_batch(&ds, &big, Task::Denoise, 1).is_err());
        let val = Dataset::from_images(vec![Image::zeros(30, 30, 1).unwrap()], DatasetRole::Validation).unwrap();
        assert!(sample_batch(&val, &cfg, Task::Denoise, 1).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let imgs = crate::synth::synth_set(3, 16, 16, 1, 1).unwrap();
        let ds = Dataset::from_images(imgs.clone(), DatasetRole::Train).unwrap();
        let val = Dataset::from_images(imgs, DatasetRole::Validation).unwrap();
        let cfg = TrainConfig { max_epochs: 0, crop_size: 8, ..Default::default() };
        let run = train(&cfg, tiny_model(), &ds, &val).unwrap();
        assert_eq!(run.record.model, init_params(tiny_model(), cfg.seed).unwrap());
        assert!(run.log.is_empty());
    }
}
