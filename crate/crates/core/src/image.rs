//! Dense images, Bayer masks, synthetic noise and PSNR.
//!
//! Pixel data is stored planar: channel-major, then row-major, so channel
//! `c` occupies the contiguous slice `data[c*H*W..(c+1)*H*W]`. Intensities
//! are in normalized units (8-bit values divided by 255).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Seeded generator used for every stochastic operation in the crate.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    mean_offset: Option<Vec<f64>>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(invalid("zero-sized image"));
        }
        if data.len() != height * width * channels {
            return Err(shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data, mean_offset: None })
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels per channel.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn mean_offset(&self) -> Option<&[f64]> {
        self.mean_offset.as_deref()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())))
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Image) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        out.mean_offset = None;
        out.axpy(-1.0, other);
        Ok(out)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        out.mean_offset = None;
        out.axpy(1.0, other);
        Ok(out)
    }

    pub fn channel_means(&self) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.plane(c).iter().sum::<f64>() / self.pixels() as f64)
            .collect()
    }

    /// Subtracts `offsets[c]` from channel `c` (only where `mask` is set, if
    /// given) and records the offsets so [`Image::restore_mean`] can undo it.
    pub fn subtract_offsets(&mut self, offsets: &[f64], mask: Option<&MaskSignal>) {
        let n = self.pixels();
        for (c, &mu) in offsets.iter().enumerate() {
            let plane = &mut self.data[c * n..(c + 1) * n];
            match mask {
                None => plane.iter_mut().for_each(|v| *v -= mu),
                Some(m) => {
                    for (v, &bit) in plane.iter_mut().zip(m.plane(c)) {
                        if bit != 0 {
                            *v -= mu;
                        }
                    }
                }
            }
        }
        self.mean_offset = Some(offsets.to_vec());
    }

    /// Per-image mean subtraction; returns the removed channel means.
    pub fn subtract_mean(&mut self) -> Vec<f64> {
        let means = self.channel_means();
        self.subtract_offsets(&means, None);
        means
    }

    /// Adds `offsets[c]` to every pixel of channel `c`.
    pub fn add_offsets(&mut self, offsets: &[f64]) {
        let n = self.pixels();
        for (c, &mu) in offsets.iter().enumerate() {
            self.data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += mu);
        }
    }

    /// Adds back a stored mean offset (no-op when none is stored).
    pub fn restore_mean(&mut self) {
        if let Some(offsets) = self.mean_offset.take() {
            self.add_offsets(&offsets);
        }
    }

    /// Copy of a `size_h`x`size_w` window starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Image> {
        if top + size_h > self.height || left + size_w > self.width {
            return Err(invalid(format!(
                "crop {size_h}x{size_w} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Image::from_fn(size_h, size_w, self.channels, |c, i, j| {
            self.get(c, top + i, left + j)
        })
    }

    pub fn flip_horizontal(&self) -> Image {
        let w = self.width;
        Image::from_fn(self.height, w, self.channels, |c, i, j| self.get(c, i, w - 1 - j))
            .expect("same dims")
    }

    pub fn flip_vertical(&self) -> Image {
        let h = self.height;
        Image::from_fn(h, self.width, self.channels, |c, i, j| self.get(c, h - 1 - i, j))
            .expect("same dims")
    }

    /// Rotation by 90 degrees counter-clockwise.
    pub fn rot90(&self) -> Image {
        let (h, w) = (self.height, self.width);
        Image::from_fn(w, h, self.channels, |c, i, j| self.get(c, j, w - 1 - i)).expect("dims")
    }

    /// Replicates a grayscale image into three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image::from_vec(self.height, self.width, 3, data).expect("dims")
    }

    /// Average of the channels.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixels();
        let data = (0..n)
            .map(|p| (0..self.channels).map(|c| self.data[c * n + p]).sum::<f64>() / self.channels as f64)
            .collect();
        Image::from_vec(self.height, self.width, 1, data).expect("dims")
    }

    /// Quantizes to 8 bits the same way the writers do.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = to_u8(*v) as f64 / 255.0);
        out
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Binary three-channel colour filter array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSignal {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskSignal {
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(shape(format!("{} mask values for {height}x{width}x3", data.len())));
        }
        if data.iter().any(|&b| b > 1) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1; height * width * 3] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> u8 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub(crate) fn check_image(&self, x: &Image) -> Result<()> {
        if x.channels() != 3 || x.height() != self.height || x.width() != self.width {
            return Err(shape(format!(
                "mask {}x{}x3 vs image {:?}",
                self.height,
                self.width,
                x.dims()
            )));
        }
        Ok(())
    }

    /// In-place `x ← m ∘ x`, for callers that already validated shapes.
    pub(crate) fn mask_in_place(&self, x: &mut Image) {
        for (v, &bit) in x.data_mut().iter_mut().zip(&self.data) {
            *v *= bit as f64;
        }
    }

    /// Crops the mask like [`Image::crop`].
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<MaskSignal> {
        if top + h > self.height || left + w > self.width {
            return Err(invalid("mask crop out of range"));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    data.push(self.get(c, top + i, left + j));
                }
            }
        }
        MaskSignal::from_vec(h, w, data)
    }
}

/// Elementwise `m ∘ x`.
pub fn apply_mask(m: &MaskSignal, x: &Image) -> Result<Image> {
    m.check_image(x)?;
    let mut out = x.clone();
    m.mask_in_place(&mut out);
    Ok(out)
}

/// RGGB Bayer pattern: even rows alternate R,G and odd rows alternate G,B.
pub fn make_bayer_mask(h: usize, w: usize) -> Result<MaskSignal> {
    if h < 2 || w < 2 {
        return Err(invalid(format!("Bayer mask needs at least 2x2, got {h}x{w}")));
    }
    let mut data = vec![0u8; h * w * 3];
    for i in 0..h {
        for j in 0..w {
            let c = match (i % 2, j % 2) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            };
            data[(c * h + i) * w + j] = 1;
        }
    }
    MaskSignal::from_vec(h, w, data)
}

/// Adds white Gaussian noise with standard deviation `sigma / 255`.
pub fn awgn(x: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    let mut out = x.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let std = sigma / 255.0;
    let mut rng = rng_from_seed(seed);
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += std * n;
    }
    Ok(out)
}

/// Peak signal-to-noise ratio with unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    reference.check_same_shape(test, "psnr")?;
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Channel-wise nearest-neighbour fill of a Bayer mosaic: every missing
/// sample copies the closest observed sample of the same channel.
pub fn nearest_fill(y: &Image, m: &MaskSignal) -> Result<Image> {
    m.check_image(y)?;
    let (h, w) = (y.height(), y.width());
    let mut out = y.clone();
    for c in 0..3 {
        let observed: Vec<(usize, usize)> = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .filter(|&(i, j)| m.get(c, i, j) != 0)
            .collect();
        if observed.is_empty() {
            continue;
        }
        for i in 0..h {
            for j in 0..w {
                if m.get(c, i, j) != 0 {
                    continue;
                }
                // Bayer sites repeat every two pixels, so the nearest observed
                // sample lies within a 5x5 window.
                let mut best = None;
                let mut best_d = usize::MAX;
                for di in -2isize..=2 {
                    for dj in -2isize..=2 {
                        let (ii, jj) = (i as isize + di, j as isize + dj);
                        if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                            continue;
                        }
                        let (ii, jj) = (ii as usize, jj as usize);
                        if m.get(c, ii, jj) == 0 {
                            continue;
                        }
                        let d = (di * di + dj * dj) as usize;
                        if d < best_d {
                            best_d = d;
                            best = Some((ii, jj));
                        }
                    }
                }
                let (ii, jj) = best.unwrap_or_else(|| {
                    *observed
                        .iter()
                        .min_by_key(|&&(a, b)| a.abs_diff(i).pow(2) + b.abs_diff(j).pow(2))
                        .expect("non-empty")
                });
                out.set(c, i, j, y.get(c, ii, jj));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |c, i, j| (c * 7 + i * 3 + j) as f64 / 100.0).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::from_vec(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::zeros(0, 4, 1).is_err());
    }

    #[test]
    fn bayer_2x2_layout() {
        let m = make_bayer_mask(2, 2).unwrap();
        assert_eq!(m.plane(0), &[1, 0, 0, 0]);
        assert_eq!(m.plane(1), &[0, 1, 1, 0]);
        assert_eq!(m.plane(2), &[0, 0, 0, 1]);
    }

    #[test]
    fn bayer_is_periodic_with_one_channel_per_pixel() {
        let small = make_bayer_mask(2, 2).unwrap();
        let big = make_bayer_mask(4, 4).unwrap();
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(big.get(c, i, j), small.get(c, i % 2, j % 2));
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!((0..3).map(|c| big.get(c, i, j)).sum::<u8>(), 1);
            }
        }
        assert!(make_bayer_mask(1, 4).is_err());
    }

    #[test]
    fn mask_identities() {
        let x = ramp(4, 6, 3);
        assert_eq!(apply_mask(&MaskSignal::ones(4, 6), &x).unwrap(), x);
        assert!(apply_mask(&MaskSignal::zeros(4, 6), &x).unwrap().data().iter().all(|&v| v == 0.0));
        let m = make_bayer_mask(4, 6).unwrap();
        let once = apply_mask(&m, &x).unwrap();
        assert_eq!(apply_mask(&m, &once).unwrap(), once);
        assert!(apply_mask(&m, &ramp(4, 6, 1)).is_err());
        assert!(apply_mask(&m, &ramp(4, 5, 3)).is_err());
    }

    #[test]
    fn awgn_zero_sigma_and_determinism() {
        let x = ramp(8, 8, 1);
        assert_eq!(awgn(&x, 0.0, 3).unwrap(), x);
        assert_eq!(awgn(&x, 10.0, 3).unwrap(), awgn(&x, 10.0, 3).unwrap());
        assert_ne!(awgn(&x, 10.0, 3).unwrap(), awgn(&x, 10.0, 4).unwrap());
        assert!(awgn(&x, -1.0, 0).is_err());
    }

    #[test]
    fn awgn_statistics_at_sigma_25() {
        let x = Image::zeros(256, 256, 1).unwrap();
        let y = awgn(&x, 25.0, 11).unwrap();
        let n = y.data().len() as f64;
        let mean = y.data().iter().sum::<f64>() / n;
        let std = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = 25.0 / 255.0;
        assert!((std - target).abs() / target < 0.02, "std {std}");
        let p = psnr(&x, &y).unwrap();
        assert!((p - 20.0 * (255.0f64 / 25.0).log10()).abs() < 0.1, "psnr {p}");
    }

    #[test]
    fn psnr_closed_forms() {
        let x = ramp(5, 5, 1);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v += 1.0 / 255.0);
        assert!((psnr(&x, &y).unwrap() - 48.1308).abs() < 1e-3);
        let mut z = x.clone();
        z.data_mut().iter_mut().for_each(|v| *v += 25.0 / 255.0);
        assert!((psnr(&x, &z).unwrap() - 20.1724).abs() < 1e-3);
        assert!(psnr(&x, &ramp(5, 4, 1)).is_err());
    }

    #[test]
    fn mean_subtraction_round_trip() {
        let x = ramp(4, 4, 3);
        let mut y = x.clone();
        let means = y.subtract_mean();
        assert_eq!(means.len(), 3);
        assert!(y.channel_means().iter().all(|m| m.abs() < 1e-12));
        y.restore_mean();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_transforms() {
        let x = ramp(3, 5, 1);
        assert_eq!(x.flip_horizontal().flip_horizontal(), x);
        assert_eq!(x.flip_vertical().flip_vertical(), x);
        let r = x.rot90();
        assert_eq!(r.dims(), (5, 3, 1));
        assert_eq!(r.rot90().rot90().rot90(), x);
        assert_eq!(x.crop(1, 2, 2, 3).unwrap().get(0, 0, 0), x.get(0, 1, 2));
        assert!(x.crop(2, 0, 2, 2).is_err());
    }

    #[test]
    fn nearest_fill_reproduces_constant_channels() {
        let x = Image::from_fn(6, 6, 3, |c, _, _| [0.2, 0.5, 0.8][c]).unwrap();
        let m = make_bayer_mask(6, 6).unwrap();
        let y = apply_mask(&m, &x).unwrap();
        let filled = nearest_fill(&y, &m).unwrap();
        for (a, b) in filled.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
