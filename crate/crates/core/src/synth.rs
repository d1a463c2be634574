//! Procedural test images with natural-image traits: smooth shading,
//! occluding shapes with sharp edges, and patches of oriented texture.
//!
//! Used for desk-scale training and tests where no photo collection is at
//! hand. Every image is a pure function of its seed.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::image::{rng_from_seed, Image, Rng as ImageRng};

enum Fill {
    Flat,
    /// Oriented sinusoidal grating: (frequency, angle, contrast).
    Grating(f64, f64, f64),
    /// Linear ramp across the shape: (angle, contrast).
    Ramp(f64, f64),
}

enum Shape {
    Ellipse { ci: f64, cj: f64, ri: f64, rj: f64, cos: f64, sin: f64 },
    Rect { i0: f64, j0: f64, i1: f64, j1: f64 },
    HalfPlane { ci: f64, cj: f64, ni: f64, nj: f64 },
}

impl Shape {
    fn contains(&self, i: f64, j: f64) -> bool {
        match *self {
            Shape::Ellipse { ci, cj, ri, rj, cos, sin } => {
                let (di, dj) = (i - ci, j - cj);
                let u = cos * di + sin * dj;
                let v = -sin * di + cos * dj;
                (u / ri).powi(2) + (v / rj).powi(2) <= 1.0
            }
            Shape::Rect { i0, j0, i1, j1 } => i >= i0 && i <= i1 && j >= j0 && j <= j1,
            Shape::HalfPlane { ci, cj, ni, nj } => (i - ci) * ni + (j - cj) * nj >= 0.0,
        }
    }
}

struct Layer {
    shape: Shape,
    color: [f64; 3],
    fill: Fill,
}

fn random_color(rng: &mut ImageRng) -> [f64; 3] {
    // Correlated channels: a luminance with mild chroma offsets.
    let lum = rng.gen_range(0.1..0.9);
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = (lum + rng.gen_range(-0.15..0.15f64)).clamp(0.0, 1.0);
    }
    c
}

fn random_layer(rng: &mut ImageRng, h: f64, w: f64) -> Layer {
    let scale = h.min(w);
    let shape = match rng.gen_range(0..5) {
        0 | 1 => {
            let angle = rng.gen_range(0.0..PI);
            Shape::Ellipse {
                ci: rng.gen_range(0.0..h),
                cj: rng.gen_range(0.0..w),
                ri: rng.gen_range(0.08..0.35) * scale,
                rj: rng.gen_range(0.08..0.35) * scale,
                cos: angle.cos(),
                sin: angle.sin(),
            }
        }
        2 | 3 => {
            let (a, b) = (rng.gen_range(0.0..h), rng.gen_range(0.0..h));
            let (c, d) = (rng.gen_range(0.0..w), rng.gen_range(0.0..w));
            Shape::Rect { i0: a.min(b), i1: a.max(b) + 2.0, j0: c.min(d), j1: c.max(d) + 2.0 }
        }
        _ => {
            let angle = rng.gen_range(0.0..2.0 * PI);
            Shape::HalfPlane { ci: rng.gen_range(0.0..h), cj: rng.gen_range(0.0..w), ni: angle.cos(), nj: angle.sin() }
        }
    };
    let fill = match rng.gen_range(0..4) {
        0 => Fill::Grating(rng.gen_range(0.15..0.9), rng.gen_range(0.0..PI), rng.gen_range(0.05..0.2)),
        1 => Fill::Ramp(rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.1..0.3)),
        _ => Fill::Flat,
    };
    Layer { shape, color: random_color(rng), fill }
}

fn fill_value(fill: &Fill, base: f64, i: f64, j: f64, scale: f64) -> f64 {
    match *fill {
        Fill::Flat => base,
        Fill::Grating(freq, angle, contrast) => base + contrast * (freq * (i * angle.cos() + j * angle.sin())).sin(),
        Fill::Ramp(angle, contrast) => base + contrast * (i * angle.cos() + j * angle.sin()) / scale,
    }
}

/// One synthetic image in `[0, 1]` with `channels` ∈ {1, 3}.
pub fn synth_image(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image> {
    if channels != 1 && channels != 3 {
        return Err(invalid(format!("channels must be 1 or 3, got {channels}")));
    }
    if height == 0 || width == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let (h, w) = (height as f64, width as f64);
    let scale = h.max(w);
    // Background: a few low-frequency cosines around a random colour.
    let bg = random_color(&mut rng);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..2.5) * PI / scale,
                rng.gen_range(0.5..2.5) * PI / scale,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.03..0.12),
            )
        })
        .collect();
    let count = rng.gen_range(6..14);
    let layers: Vec<Layer> = (0..count).map(|_| random_layer(&mut rng, h, w)).collect();
    let mut img = Image::zeros(height, width, channels)?;
    for i in 0..height {
        for j in 0..width {
            let (fi, fj) = (i as f64, j as f64);
            let shade: f64 = waves.iter().map(|&(a, b, p, amp)| amp * (a * fi + b * fj + p).cos()).sum();
            let mut color = bg.map(|c| c + shade);
            for layer in &layers {
                if layer.shape.contains(fi, fj) {
                    for (c, &base) in color.iter_mut().zip(&layer.color) {
                        *c = fill_value(&layer.fill, base, fi, fj, scale) + 0.5 * shade;
                    }
                }
            }
            if channels == 1 {
                let gray = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
                img.set(0, i, j, gray.clamp(0.0, 1.0));
            } else {
                for (c, v) in color.iter().enumerate() {
                    img.set(c, i, j, v.clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(img)
}

/// `count` images with seeds `seed, seed + 1, …`, quantized to 8 bits so they
/// survive a round trip through image files unchanged.
pub fn synth_set(count: usize, height: usize, width: usize, channels: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count as u64)
        .map(|k| synth_image(height, width, channels, seed.wrapping_add(k)).map(|x| x.quantized()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_image(40, 30, 3, 9).unwrap();
        assert_eq!(a, synth_image(40, 30, 3, 9).unwrap());
        assert_ne!(a, synth_image(40, 30, 3, 10).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn has_structure() {
        let x = synth_image(64, 64, 1, 1).unwrap();
        let mean = x.data().iter().sum::<f64>() / 4096.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4096.0;
        assert!(var > 1e-3);
    }

    #[test]
    fn rejects_bad_channels() {
        assert!(synth_image(8, 8, 2, 0).is_err());
        assert!(synth_set(2, 8, 8, 1, 0).unwrap().len() == 2);
    }
}
