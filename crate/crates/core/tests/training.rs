use cdlnet::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, write_checkpoint};
use cdlnet::config::TrainConfig;
use cdlnet::grad::LossKind;
use cdlnet::model::{init_params, ModelConfig, Task, ThresholdMode};
use cdlnet::synth::synth_set;
use cdlnet::train::{make_sample, sample_batch, train, Augmentation, Dataset, DatasetRole};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn model(task: Task) -> ModelConfig {
    ModelConfig {
        unrollings: 2,
        subbands: 4,
        filter_size: 3,
        stride: 1,
        channels: if task == Task::Jdd { 3 } else { 1 },
        task,
        threshold: ThresholdMode::Soft,
        adaptive: true,
    }
}

fn data(c: usize) -> (Dataset, Dataset) {
    let tr = Dataset::from_images(synth_set(6, 24, 24, c, 10).unwrap(), DatasetRole::Train).unwrap();
    let va = Dataset::from_images(synth_set(2, 24, 24, c, 20).unwrap(), DatasetRole::Validation).unwrap();
    (tr, va)
}

fn tiny(loss: LossKind) -> TrainConfig {
    TrainConfig { batch_size: 3, crop_size: 16, max_epochs: 4, val_every: 2, loss, ..Default::default() }
}

fn bytes(rec: &cdlnet::checkpoint::CheckpointRecord) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(rec, &mut out).unwrap();
    out
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    for (task, loss) in [(Task::Denoise, LossKind::Mse), (Task::Denoise, LossKind::McSure), (Task::Jdd, LossKind::Mse)] {
        let (tr, va) = data(model(task).channels);
        let a = train(&tiny(loss), model(task), &tr, &va).unwrap();
        let b = train(&tiny(loss), model(task), &tr, &va).unwrap();
        assert_eq!(bytes(&a.record), bytes(&b.record));
        assert_eq!(a.log, b.log);
        let c = train(&TrainConfig { seed: 1, ..tiny(loss) }, model(task), &tr, &va).unwrap();
        assert_ne!(bytes(&a.record), bytes(&c.record));
    }
}

#[test]
fn training_improves_on_initialization() {
    let (tr, va) = data(1);
    let cfg = TrainConfig { max_epochs: 30, val_every: 30, lr0: 5e-3, ..tiny(LossKind::Mse) };
    let run = train(&cfg, model(Task::Denoise), &tr, &va).unwrap();
    let init = init_params(model(Task::Denoise), cfg.seed).unwrap();
    let val = cdlnet::train::ValidationSet::new(&va, Task::Denoise, cfg.sigma_mid(), 0).unwrap();
    assert!(val.mean_psnr(&run.record.model).unwrap() > val.mean_psnr(&init).unwrap());
    assert_eq!(run.log.len(), 30);
}

#[test]
fn zero_epochs_returns_initialization() {
    let (tr, va) = data(1);
    let run = train(&TrainConfig { max_epochs: 0, ..tiny(LossKind::Mse) }, model(Task::Denoise), &tr, &va).unwrap();
    assert_eq!(run.record.model, init_params(model(Task::Denoise), 0).unwrap());
    assert!(run.log.is_empty());
}

#[test]
fn checkpoint_round_trip_after_training() {
    let (tr, va) = data(1);
    let run = train(&tiny(LossKind::Mse), model(Task::Denoise), &tr, &va).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&run.record, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, run.record);
    assert_eq!(back.epoch, 4);
    assert_eq!(back.val_history.len(), 2);
    assert!(load_checkpoint_for(&path, &ModelConfig { unrollings: 3, ..model(Task::Denoise) }).is_err());
}

#[test]
fn huge_steps_trigger_backtracking() {
    let (tr, va) = data(1);
    let cfg = TrainConfig { lr0: 0.5, max_epochs: 12, val_every: 1, ..tiny(LossKind::Mse) };
    let run = train(&cfg, model(Task::Denoise), &tr, &va).unwrap();
    let last = run.log.last().unwrap();
    assert!(last.backtracks > 0, "{:?}", run.log);
    assert!(last.lr < cfg.lr0);
    assert!(run.record.model.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite())));
}

#[test]
fn sigma_draws_are_uniform() {
    let x = &synth_set(1, 24, 24, 1, 1).unwrap()[0];
    let cfg = TrainConfig { crop_size: 8, ..Default::default() };
    let bins = 10;
    let n = 4000;
    let mut counts = vec![0usize; bins];
    for k in 0..n {
        let s = make_sample(x, &cfg, Task::Denoise, Augmentation::NONE, k).unwrap();
        assert!((cfg.sigma_lo..=cfg.sigma_hi).contains(&s.sigma));
        let b = ((s.sigma - cfg.sigma_lo) / (cfg.sigma_hi - cfg.sigma_lo) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let expect = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2} p {p}");
}

#[test]
fn batches_are_deterministic_and_cropped() {
    let (tr, _) = data(3);
    let cfg = TrainConfig { crop_size: 16, batch_size: 4, ..Default::default() };
    let a = sample_batch(&tr, &cfg, Task::Jdd, 5).unwrap();
    let b = sample_batch(&tr, &cfg, Task::Jdd, 5).unwrap();
    assert_eq!(a.len(), 4);
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.y, q.y);
        assert_eq!(p.y.dims(), (16, 16, 3));
        assert!(p.mask.is_some());
    }
}
