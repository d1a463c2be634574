//! Blind noise-level estimation.
//!
//! Two estimators with different cost: the median absolute deviation of the
//! diagonal Haar subband (linear time), and a patch-PCA estimator that keeps
//! the smallest eigenvalue of the covariance of weakly textured patches.
//! Both report σ̂ on the 0–255 scale; colour images are estimated per channel
//! and averaged.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};
use crate::image::Image;

/// MAD-to-σ factor of the standard normal distribution.
pub const MAD_FACTOR: f64 = 0.6745;
pub const DEFAULT_PCA_PATCH: usize = 7;
/// Relative change of the smallest eigenvalue that ends patch trimming.
pub const PCA_STABLE_TOL: f64 = 0.01;
const PCA_MAX_ROUNDS: usize = 10;
/// Chi-square level of the texture cut-off for noise-only patches.
const TRIM_LEVEL: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMethod {
    Mad,
    Pca,
    GroundTruth,
}

impl NoiseMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMethod::Mad => "mad",
            NoiseMethod::Pca => "pca",
            NoiseMethod::GroundTruth => "gt",
        }
    }
}

impl std::str::FromStr for NoiseMethod {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mad" => Ok(NoiseMethod::Mad),
            "pca" => Ok(NoiseMethod::Pca),
            "gt" | "ground_truth" => Ok(NoiseMethod::GroundTruth),
            _ => Err(invalid(format!("unknown noise estimator '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseEstimate {
    /// Estimated standard deviation on the 0–255 scale.
    pub sigma_hat: f64,
    pub method: NoiseMethod,
    pub elapsed: Duration,
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// One-level orthonormal Haar diagonal (HH) coefficients of a plane.
fn haar_diagonal(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((h / 2) * (w / 2));
    for i in (0..h - 1).step_by(2) {
        for j in (0..w - 1).step_by(2) {
            let a = plane[i * w + j];
            let b = plane[i * w + j + 1];
            let c = plane[(i + 1) * w + j];
            let d = plane[(i + 1) * w + j + 1];
            out.push(0.5 * (a - b - c + d));
        }
    }
    out
}

/// `median(|HH|) / 0.6745`, rescaled to 0–255.
pub fn estimate_mad(y: &Image) -> Result<NoiseEstimate> {
    let start = Instant::now();
    let (h, w) = (y.height(), y.width());
    if h < 2 || w < 2 {
        return Err(invalid(format!("MAD estimation needs at least 2x2 pixels, got {h}x{w}")));
    }
    let mut total = 0.0;
    for c in 0..y.channels() {
        let mut hh: Vec<f64> = haar_diagonal(y.plane(c), h, w).into_iter().map(f64::abs).collect();
        total += median(&mut hh) / MAD_FACTOR;
    }
    Ok(NoiseEstimate {
        sigma_hat: 255.0 * total / y.channels() as f64,
        method: NoiseMethod::Mad,
        elapsed: start.elapsed(),
    })
}

fn chi2_quantile(dof: f64, level: f64) -> f64 {
    ChiSquared::new(dof).expect("positive degrees of freedom").inverse_cdf(level)
}

struct Patches {
    dim: usize,
    count: usize,
    values: Vec<f64>,
    /// Sample variance of each patch's pixels.
    spread: Vec<f64>,
}

fn extract_patches(plane: &[f64], h: usize, w: usize, p: usize) -> Patches {
    let dim = p * p;
    let count = (h - p + 1) * (w - p + 1);
    let mut values = Vec::with_capacity(count * dim);
    let mut spread = Vec::with_capacity(count);
    for i in 0..=h - p {
        for j in 0..=w - p {
            let start = values.len();
            for a in 0..p {
                values.extend_from_slice(&plane[(i + a) * w + j..(i + a) * w + j + p]);
            }
            let patch = &values[start..];
            let mean = patch.iter().sum::<f64>() / dim as f64;
            let var = patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (dim - 1) as f64;
            spread.push(var);
        }
    }
    Patches { dim, count, values, spread }
}

/// Smallest eigenvalue of the covariance of the selected patches.
fn min_covariance_eigenvalue(patches: &Patches, keep: &[bool]) -> Option<(f64, usize)> {
    let d = patches.dim;
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    let mut n = 0usize;
    for (idx, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        let v = &patches.values[idx * d..(idx + 1) * d];
        for a in 0..d {
            mean[a] += v[a];
            let va = v[a];
            let row = &mut second[a * d..a * d + a + 1];
            for (s, &vb) in row.iter_mut().zip(&v[..=a]) {
                *s += va * vb;
            }
        }
        n += 1;
    }
    if n <= d {
        return None;
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let cov = DMatrix::from_fn(d, d, |a, b| {
        let (a, b) = if b > a { (b, a) } else { (a, b) };
        (second[a * d + b] - nf * mean[a] * mean[b]) / (nf - 1.0)
    });
    let eig = SymmetricEigen::new(cov);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Some((min.max(0.0), n))
}

fn pca_sigma_plane(plane: &[f64], h: usize, w: usize, p: usize) -> Result<f64> {
    let patches = extract_patches(plane, h, w, p);
    let d = patches.dim as f64;
    let cutoff = chi2_quantile(d - 1.0, TRIM_LEVEL) / (d - 1.0);
    let mut keep = vec![true; patches.count];
    let (mut lambda, mut n) = min_covariance_eigenvalue(&patches, &keep)
        .ok_or_else(|| invalid("not enough patches for PCA noise estimation"))?;
    for _ in 0..PCA_MAX_ROUNDS {
        let limit = lambda * cutoff;
        let mut changed = false;
        for (k, &s) in keep.iter_mut().zip(&patches.spread) {
            let next = s <= limit;
            changed |= next != *k;
            *k = next;
        }
        if !changed {
            break;
        }
        let Some((next, count)) = min_covariance_eigenvalue(&patches, &keep) else { break };
        let stable = (next - lambda).abs() <= PCA_STABLE_TOL * lambda.max(f64::MIN_POSITIVE);
        lambda = next;
        n = count;
        if stable {
            break;
        }
    }
    // The smallest sample eigenvalue sits at the lower Marchenko–Pastur edge.
    let edge = (1.0 - (d / n as f64).sqrt()).powi(2);
    Ok((lambda / edge).sqrt())
}

/// Patch-PCA estimate with `patch`×`patch` overlapping patches.
pub fn estimate_pca(y: &Image, patch: usize) -> Result<NoiseEstimate> {
    let start = Instant::now();
    let (h, w) = (y.height(), y.width());
    if patch < 2 || h < patch || w < patch {
        return Err(invalid(format!("{h}x{w} image is too small for {patch}x{patch} patches")));
    }
    let count = (h - patch + 1) * (w - patch + 1);
    if count < 10 * patch * patch {
        return Err(invalid(format!(
            "{count} patches is fewer than ten per patch dimension ({})",
            patch * patch
        )));
    }
    let mut total = 0.0;
    for c in 0..y.channels() {
        total += pca_sigma_plane(y.plane(c), h, w, patch)?;
    }
    Ok(NoiseEstimate {
        sigma_hat: 255.0 * total / y.channels() as f64,
        method: NoiseMethod::Pca,
        elapsed: start.elapsed(),
    })
}
