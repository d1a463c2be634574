//! Finite-difference gradient checking shared by the test targets.
#![allow(dead_code)]

use cdlnet::grad::{loss_mcsure, loss_mse, mcsure_value_and_grad, mse_value_and_grad, NetworkMap, Observation};
use cdlnet::image::{awgn, make_bayer_mask, rng_from_seed};
use cdlnet::model::{init_params, ForwardTrace, ModelConfig, ModelParams, Task, ThresholdMode};
use cdlnet::Image;
use rand::Rng;
use rand_distr::StandardNormal;

pub const REL_TOL: f64 = 1e-5;

pub fn config(k: usize, m: usize, stride: usize, task: Task, threshold: ThresholdMode, channels: usize) -> ModelConfig {
    ModelConfig {
        unrollings: k,
        subbands: m,
        filter_size: 3,
        stride,
        channels,
        task,
        threshold,
        adaptive: true,
    }
}

/// Initialised weights nudged off the tied point so every layer differs.
pub fn perturbed(cfg: ModelConfig, seed: u64) -> ModelParams {
    let mut theta = init_params(cfg, seed).unwrap();
    let mut rng = rng_from_seed(seed + 100);
    for slice in theta.param_slices_mut() {
        for v in slice.iter_mut() {
            *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for layer in &mut theta.layers {
        layer.tau0.iter_mut().for_each(|t| *t = 0.02 + 0.02 * rng.gen::<f64>());
        layer.tau1.iter_mut().for_each(|t| *t = 0.05 + 0.05 * rng.gen::<f64>());
    }
    theta
}

pub fn clean(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = rng_from_seed(seed);
    let (fi, fj) = (0.3 + rng.gen::<f64>(), 0.2 + rng.gen::<f64>());
    Image::from_fn(h, w, c, |ch, i, j| {
        0.5 + 0.3 * ((fi * i as f64 + ch as f64).sin() * (fj * j as f64).cos())
    })
    .unwrap()
}

pub fn observation(task: Task, x: &Image, sigma: f64, seed: u64) -> Observation {
    let mut y = awgn(x, sigma, seed).unwrap();
    y.subtract_mean();
    match task {
        Task::Denoise => Observation::new(y, sigma),
        Task::Jdd => {
            let m = make_bayer_mask(x.height(), x.width()).unwrap();
            let y = cdlnet::image::apply_mask(&m, &y).unwrap();
            Observation::masked(y, m, sigma)
        }
    }
}

/// Which thresholds are active in each layer; a change means a kink was crossed.
pub fn active_pattern(trace: &ForwardTrace, mode: ThresholdMode) -> Vec<bool> {
    let mut out = Vec::new();
    for layer in &trace.layers {
        let pre = &layer.pre;
        for m in 0..pre.num_subbands() {
            let tau = layer.tau[m];
            match mode {
                ThresholdMode::Soft => {
                    for g in 0..pre.groups() {
                        out.extend(pre.plane(m, g).iter().map(|v| v.abs() > tau));
                    }
                }
                ThresholdMode::Block => {
                    for p in 0..pre.grid_len() {
                        let n2: f64 = (0..pre.groups()).map(|g| pre.plane(m, g)[p].powi(2)).sum();
                        out.push(n2.sqrt() > tau);
                    }
                }
            }
        }
    }
    out
}

pub fn shifted(theta: &ModelParams, group: usize, dir: &[f64], step: f64) -> ModelParams {
    let mut t = theta.clone();
    let slice = &mut t.param_slices_mut()[group];
    for (v, d) in slice.iter_mut().zip(dir) {
        *v += step * d;
    }
    t
}

pub enum Loss<'a> {
    Mse(&'a Image),
    Sure(u64),
}

pub fn value(theta: &ModelParams, obs: &Observation, loss: &Loss) -> f64 {
    match loss {
        Loss::Mse(x) => loss_mse(theta, obs, x).unwrap().value,
        Loss::Sure(seed) => {
            let f = NetworkMap { theta, mask: obs.mask.as_ref(), sigma: obs.sigma };
            loss_mcsure(&f, &obs.y, obs.sigma, *seed).unwrap().value
        }
    }
}

/// Directional central differences per parameter group; returns the worst
/// relative error and the number of groups checked.
pub fn check(theta: &ModelParams, obs: &Observation, loss: Loss, label: &str) -> (f64, usize) {
    let grads = match &loss {
        Loss::Mse(x) => mse_value_and_grad(theta, obs, x).unwrap().1,
        Loss::Sure(seed) => mcsure_value_and_grad(theta, obs, *seed).unwrap().1,
    };
    let mode = theta.config.threshold;
    let base = active_pattern(&theta.forward_traced(&obs.y, obs.mask.as_ref(), obs.sigma).unwrap(), mode);
    let names = theta.param_names();
    let analytic = grads.slices();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (gi, g) in analytic.iter().enumerate() {
        let mut rng = rng_from_seed(1000 + gi as u64);
        let dir: Vec<f64> = (0..g.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut step = 1e-5;
        let mut clean_step = None;
        for _ in 0..4 {
            let plus = shifted(theta, gi, &dir, step);
            let minus = shifted(theta, gi, &dir, -step);
            let same = [&plus, &minus].iter().all(|t| {
                let tr = t.forward_traced(&obs.y, obs.mask.as_ref(), obs.sigma).unwrap();
                active_pattern(&tr, mode) == base
            });
            if same {
                clean_step = Some((step, plus, minus));
                break;
            }
            step /= 10.0;
        }
        let Some((step, plus, minus)) = clean_step else { continue };
        let fd = (value(&plus, obs, &loss) - value(&minus, obs, &loss)) / (2.0 * step);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let scale = fd.abs().max(an.abs());
        let rel = if scale < 1e-12 { 0.0 } else { (fd - an).abs() / scale };
        if rel >= REL_TOL {
            eprintln!("{label}: group {} fd {fd:e} analytic {an:e} rel {rel:e}", names[gi]);
        }
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, checked)
}

pub struct CaseResult {
    pub label: String,
    pub worst: f64,
    pub checked: usize,
    pub groups: usize,
}

impl CaseResult {
    /// At least 90% of groups were checked away from kinks and all agree.
    pub fn passed(&self) -> bool {
        self.checked * 10 >= self.groups * 9 && self.worst < REL_TOL
    }
}

pub fn run_case(k: usize, m: usize, task: Task, mode: ThresholdMode, stride: usize) -> CaseResult {
    let channels = if task == Task::Jdd || mode == ThresholdMode::Block { 3 } else { 1 };
    let theta = perturbed(config(k, m, stride, task, mode, channels), 7 + k as u64 * 10 + m as u64);
    let x = clean(9, 10, channels, 3);
    let obs = observation(task, &x, 25.0, 11);
    let mut x_centered = x.clone();
    x_centered.subtract_mean();
    let label = format!("K={k} M={m} {task:?} {mode:?} s={stride}");
    let (worst, checked) = check(&theta, &obs, Loss::Mse(&x_centered), &label);
    CaseResult { label, worst, checked, groups: theta.param_slices().len() }
}
