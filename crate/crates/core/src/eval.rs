//! σ-sweep evaluation with optional blind noise estimation.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::image::{apply_mask, awgn, make_bayer_mask, psnr, Image, MaskSignal};
use crate::model::{ModelParams, Task};
use crate::noise::{estimate_mad, estimate_pca, NoiseMethod, DEFAULT_PCA_PATCH};
use crate::train::mix_seed;

/// Stable 64-bit FNV-1a hash, used to key noise seeds by image name.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the noise added to image `name` at level `sigma`.
///
/// Shared by the evaluation sweep and single-image commands so both see the
/// same noisy input.
pub fn noise_seed(base: u64, name: &str, sigma: f64) -> u64 {
    mix_seed(mix_seed(base, fnv1a(name)), sigma.to_bits())
}

/// Noisy observation of a clean image as the network receives it.
pub struct Degraded {
    pub y: Image,
    pub mask: Option<MaskSignal>,
}

pub fn degrade(x: &Image, task: Task, sigma: f64, seed: u64) -> Result<Degraded> {
    let noisy = awgn(x, sigma, seed)?;
    match task {
        Task::Denoise => Ok(Degraded { y: noisy, mask: None }),
        Task::Jdd => {
            let m = make_bayer_mask(x.height(), x.width())?;
            Ok(Degraded { y: apply_mask(&m, &noisy)?, mask: Some(m) })
        }
    }
}

/// σ fed to the thresholds: the given value, or an estimate from `y`.
pub fn sigma_for(y: &Image, method: NoiseMethod, sigma_gt: f64) -> Result<f64> {
    match method {
        NoiseMethod::GroundTruth => Ok(sigma_gt),
        NoiseMethod::Mad => Ok(estimate_mad(y)?.sigma_hat),
        NoiseMethod::Pca => Ok(estimate_pca(y, DEFAULT_PCA_PATCH)?.sigma_hat),
    }
}

/// Runs the model on an observation.
pub fn reconstruct(theta: &ModelParams, d: &Degraded, sigma: f64) -> Result<Image> {
    match (&d.mask, theta.config.task) {
        (None, Task::Denoise) => theta.denoise(&d.y, sigma),
        (Some(m), Task::Jdd) => theta.demosaic(&d.y, m, sigma),
        _ => Err(invalid("observation does not match the model task")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub sigma: f64,
    pub method: NoiseMethod,
    pub sigma_used: f64,
    pub psnr_noisy: f64,
    pub psnr_out: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalAggregate {
    pub sigma: f64,
    pub method: NoiseMethod,
    pub count: usize,
    pub sigma_used: f64,
    pub psnr_noisy: f64,
    pub psnr_out: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: Vec<EvalAggregate>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "kind,image,sigma,method,sigma_used,psnr_noisy,psnr_denoised";

    fn from_rows(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.image.cmp(&b.image).then(a.sigma.total_cmp(&b.sigma)));
        let mut sigmas: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
        sigmas.sort_by(f64::total_cmp);
        sigmas.dedup();
        let aggregates = sigmas
            .into_iter()
            .map(|s| {
                let group: Vec<&EvalRow> = rows.iter().filter(|r| r.sigma == s).collect();
                let n = group.len() as f64;
                let mean = |f: fn(&EvalRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
                EvalAggregate {
                    sigma: s,
                    method: group[0].method,
                    count: group.len(),
                    sigma_used: mean(|r| r.sigma_used),
                    psnr_noisy: mean(|r| r.psnr_noisy),
                    psnr_out: mean(|r| r.psnr_out),
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    /// Per-image rows (`kind = row`) followed by per-σ means (`kind = mean`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "row,{},{},{},{:.6},{:.6},{:.6}",
                r.image,
                r.sigma,
                r.method.as_str(),
                r.sigma_used,
                r.psnr_noisy,
                r.psnr_out
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "mean,,{},{},{:.6},{:.6},{:.6}",
                a.sigma,
                a.method.as_str(),
                a.sigma_used,
                a.psnr_noisy,
                a.psnr_out
            );
        }
        out
    }
}

/// Adds noise to every clean image at every σ, reconstructs, and reports PSNR.
///
/// Blind estimation is only offered for denoising; mosaics are evaluated with
/// the true σ.
pub fn evaluate(
    theta: &ModelParams,
    images: &[Image],
    names: &[String],
    sigmas: &[f64],
    method: NoiseMethod,
    seed: u64,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(invalid("no test images"));
    }
    if images.len() != names.len() {
        return Err(invalid("one name per image is required"));
    }
    if sigmas.is_empty() {
        return Err(invalid("no noise levels given"));
    }
    let task = theta.config.task;
    if task == Task::Jdd && method != NoiseMethod::GroundTruth {
        return Err(invalid("demosaicing evaluation needs the true sigma (--estimator gt)"));
    }
    let mut rows = Vec::with_capacity(images.len() * sigmas.len());
    for (x, name) in images.iter().zip(names) {
        for &sigma in sigmas {
            let d = degrade(x, task, sigma, noise_seed(seed, name, sigma))?;
            let used = sigma_for(&d.y, method, sigma)?;
            let out = reconstruct(theta, &d, used)?;
            rows.push(EvalRow {
                image: name.clone(),
                sigma,
                method,
                sigma_used: used,
                psnr_noisy: psnr(x, &d.y)?,
                psnr_out: psnr(x, &out)?,
            });
        }
    }
    Ok(EvalReport::from_rows(rows))
}
