//! Filter banks, subband codes and the strided analysis/synthesis pair.
//!
//! Analysis is a multi-subband cross-correlation evaluated on a stride-`s`
//! grid with zero padding:
//!
//! ```text
//! z[m][p][q] = Σ_c Σ_{a,b} f[m][c][a][b] · x[c][s·p + a − r][s·q + b − r],   r = (k − 1) / 2
//! ```
//!
//! Synthesis is its exact adjoint: zero-fill the code onto the image grid,
//! convolve each subband with its filter, and sum the subbands per output
//! channel. Both operators share one index map, so
//! `⟨analysis(x), z⟩ = ⟨x, synthesis(z)⟩` holds to rounding error.
//!
//! With a single-channel bank and [`Coupling::Shared`], the bank is applied
//! identically to each image channel and the code carries one group per
//! channel (the colour-coefficient layout used by block thresholding).

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Result};
use crate::image::{rng_from_seed, Image};

/// `M` square filters of side `k` with `C` channels, stored `[m][c][a][b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    num_filters: usize,
    size: usize,
    channels: usize,
    weights: Vec<f64>,
}

impl FilterBank {
    pub fn zeros(num_filters: usize, size: usize, channels: usize) -> Self {
        Self { num_filters, size, channels, weights: vec![0.0; num_filters * size * size * channels] }
    }

    pub fn from_vec(num_filters: usize, size: usize, channels: usize, weights: Vec<f64>) -> Result<Self> {
        if num_filters == 0 || size == 0 || channels == 0 {
            return Err(invalid("filter bank dimensions must be positive"));
        }
        if weights.len() != num_filters * size * size * channels {
            return Err(shape(format!(
                "{} weights for a {num_filters}x{size}x{size}x{channels} bank",
                weights.len()
            )));
        }
        Ok(Self { num_filters, size, channels, weights })
    }

    /// I.i.d. standard normal weights.
    pub fn random_normal(num_filters: usize, size: usize, channels: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let weights = (0..num_filters * size * size * channels)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { num_filters, size, channels, weights }
    }

    /// Single filter whose centre tap is 1 in every channel.
    pub fn impulse(size: usize, channels: usize) -> Self {
        let mut bank = Self::zeros(1, size, channels);
        let r = (size - 1) / 2;
        for c in 0..channels {
            bank.weights[(c * size + r) * size + r] = 1.0;
        }
        bank
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Coefficients per filter (`k·k·C`).
    pub fn filter_len(&self) -> usize {
        self.size * self.size * self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn same_shape(&self, other: &FilterBank) -> bool {
        (self.num_filters, self.size, self.channels) == (other.num_filters, other.size, other.channels)
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        let n = self.filter_len();
        &self.weights[m * n..(m + 1) * n]
    }

    pub fn filter_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.filter_len();
        &mut self.weights[m * n..(m + 1) * n]
    }

    /// One `k×k` tap plane.
    pub fn taps(&self, m: usize, c: usize) -> &[f64] {
        let kk = self.size * self.size;
        let start = (m * self.channels + c) * kk;
        &self.weights[start..start + kk]
    }

    pub fn filter_norm(&self, m: usize) -> f64 {
        self.filter(m).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Every filter rotated by 180 degrees.
    pub fn flipped(&self) -> Self {
        let k = self.size;
        let mut out = self.clone();
        for m in 0..self.num_filters {
            for c in 0..self.channels {
                let base = (m * self.channels + c) * k * k;
                for a in 0..k {
                    for b in 0..k {
                        out.weights[base + a * k + b] = self.weights[base + (k - 1 - a) * k + (k - 1 - b)];
                    }
                }
            }
        }
        out
    }

    pub fn dot(&self, other: &FilterBank) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }
}

/// `M` subbands on a stride-`s` grid, with `groups` colour components per
/// subband (1 unless the bank is shared across channels).
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandCode {
    num_subbands: usize,
    groups: usize,
    grid_height: usize,
    grid_width: usize,
    stride: usize,
    image_height: usize,
    image_width: usize,
    data: Vec<f64>,
}

pub(crate) fn grid_dim(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

impl SubbandCode {
    /// All-zero code for an `image_height×image_width` image at stride `s`.
    pub fn zeros(num_subbands: usize, groups: usize, image_height: usize, image_width: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        if image_height == 0 || image_width == 0 {
            return Err(invalid("zero-sized image"));
        }
        let grid_height = grid_dim(image_height, stride);
        let grid_width = grid_dim(image_width, stride);
        Ok(Self {
            num_subbands,
            groups,
            grid_height,
            grid_width,
            stride,
            image_height,
            image_width,
            data: vec![0.0; num_subbands * groups * grid_height * grid_width],
        })
    }

    pub fn zeros_like(other: &SubbandCode) -> Self {
        Self { data: vec![0.0; other.data.len()], ..other.clone() }
    }

    pub fn from_vec(
        num_subbands: usize,
        groups: usize,
        image_height: usize,
        image_width: usize,
        stride: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let mut z = Self::zeros(num_subbands, groups, image_height, image_width, stride)?;
        if data.len() != z.data.len() {
            return Err(shape(format!("{} code values, expected {}", data.len(), z.data.len())));
        }
        z.data = data;
        Ok(z)
    }

    pub fn num_subbands(&self) -> usize {
        self.num_subbands
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Image dims recorded by the zero-fill convention.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    pub fn grid_len(&self) -> usize {
        self.grid_height * self.grid_width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Grid plane of subband `m`, group `g`.
    pub fn plane(&self, m: usize, g: usize) -> &[f64] {
        let n = self.grid_len();
        let start = (m * self.groups + g) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, m: usize, g: usize) -> &mut [f64] {
        let n = self.grid_len();
        let start = (m * self.groups + g) * n;
        &mut self.data[start..start + n]
    }

    /// All groups of subband `m`, contiguous.
    pub fn subband(&self, m: usize) -> &[f64] {
        let n = self.grid_len() * self.groups;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn same_layout(&self, other: &SubbandCode) -> bool {
        self.num_subbands == other.num_subbands
            && self.groups == other.groups
            && self.stride == other.stride
            && self.image_dims() == other.image_dims()
    }

    pub fn dot(&self, other: &SubbandCode) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &SubbandCode) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &SubbandCode) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

/// How bank channels connect to image channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// Bank channels equal image channels; each subband sums over channels.
    Joint,
    /// Single-channel bank applied identically to every image channel.
    Shared,
}

/// Plane-level connection: (code plane, image channel, filter tap plane).
fn connections(coupling: Coupling, m: usize, channels: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..m).flat_map(move |mi| {
        (0..channels).map(move |c| match coupling {
            Coupling::Joint => (mi, c, mi * channels + c),
            Coupling::Shared => (mi * channels + c, c, mi),
        })
    })
}

fn check_bank(x_channels: usize, f: &FilterBank, coupling: Coupling) -> Result<usize> {
    match coupling {
        Coupling::Joint if f.channels() != x_channels => Err(shape(format!(
            "bank has {} channels, image has {x_channels}",
            f.channels()
        ))),
        Coupling::Shared if f.channels() != 1 => {
            Err(shape("shared coupling needs a single-channel bank"))
        }
        Coupling::Joint => Ok(1),
        Coupling::Shared => Ok(x_channels),
    }
}

/// Valid code-column range for tap column `b`: those `q` with
/// `0 <= s·q + b − r < w`, clipped to the grid.
#[inline]
fn tap_range(b: usize, r: usize, s: usize, w: usize, gw: usize) -> (usize, usize) {
    let lo = if b >= r { 0 } else { (r - b).div_ceil(s) };
    let top = w as isize - 1 + r as isize - b as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / s + 1).min(gw);
    (lo, hi.max(lo))
}

struct Geometry {
    h: usize,
    w: usize,
    gh: usize,
    gw: usize,
    k: usize,
    s: usize,
}

impl Geometry {
    fn r(&self) -> usize {
        (self.k - 1) / 2
    }

    /// Image row hit by grid row `p` and tap row `a`, if inside.
    #[inline]
    fn row(&self, p: usize, a: usize) -> Option<usize> {
        let i = (self.s * p + a) as isize - self.r() as isize;
        (i >= 0 && (i as usize) < self.h).then_some(i as usize)
    }
}

/// `out += corr_s(x, taps)` for one plane pair.
fn correlate_plane(g: &Geometry, x: &[f64], taps: &[f64], out: &mut [f64]) {
    let r = g.r();
    let ranges: Vec<(usize, usize)> = (0..g.k).map(|b| tap_range(b, r, g.s, g.w, g.gw)).collect();
    for p in 0..g.gh {
        let orow = &mut out[p * g.gw..(p + 1) * g.gw];
        for a in 0..g.k {
            let Some(i) = g.row(p, a) else { continue };
            let xrow = &x[i * g.w..(i + 1) * g.w];
            for (b, &(lo, hi)) in ranges.iter().enumerate() {
                if lo >= hi {
                    continue;
                }
                let wgt = taps[a * g.k + b];
                let j0 = g.s * lo + b - r;
                if g.s == 1 {
                    for (o, xv) in orow[lo..hi].iter_mut().zip(&xrow[j0..j0 + hi - lo]) {
                        *o += wgt * xv;
                    }
                } else {
                    for (o, xv) in orow[lo..hi].iter_mut().zip(xrow[j0..].iter().step_by(g.s)) {
                        *o += wgt * xv;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate_plane`]: `x += zero_fill(z) ∗ taps`.
fn correlate_adjoint_plane(g: &Geometry, z: &[f64], taps: &[f64], x: &mut [f64]) {
    let r = g.r();
    let ranges: Vec<(usize, usize)> = (0..g.k).map(|b| tap_range(b, r, g.s, g.w, g.gw)).collect();
    for p in 0..g.gh {
        let zrow = &z[p * g.gw..(p + 1) * g.gw];
        for a in 0..g.k {
            let Some(i) = g.row(p, a) else { continue };
            let xrow = &mut x[i * g.w..(i + 1) * g.w];
            for (b, &(lo, hi)) in ranges.iter().enumerate() {
                if lo >= hi {
                    continue;
                }
                let wgt = taps[a * g.k + b];
                let j0 = g.s * lo + b - r;
                if g.s == 1 {
                    for (xv, zv) in xrow[j0..j0 + hi - lo].iter_mut().zip(&zrow[lo..hi]) {
                        *xv += wgt * zv;
                    }
                } else {
                    for (xv, zv) in xrow[j0..].iter_mut().step_by(g.s).zip(&zrow[lo..hi]) {
                        *xv += wgt * zv;
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four lanes so the compiler can vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `taps += Σ_{p,q} z[p][q] · x[s·p + a − r][s·q + b − r]`.
fn correlate_weights_plane(g: &Geometry, z: &[f64], x: &[f64], taps: &mut [f64]) {
    let r = g.r();
    let ranges: Vec<(usize, usize)> = (0..g.k).map(|b| tap_range(b, r, g.s, g.w, g.gw)).collect();
    for p in 0..g.gh {
        let zrow = &z[p * g.gw..(p + 1) * g.gw];
        for a in 0..g.k {
            let Some(i) = g.row(p, a) else { continue };
            let xrow = &x[i * g.w..(i + 1) * g.w];
            for (b, &(lo, hi)) in ranges.iter().enumerate() {
                if lo >= hi {
                    continue;
                }
                let j0 = g.s * lo + b - r;
                let acc = if g.s == 1 {
                    dot(&zrow[lo..hi], &xrow[j0..j0 + hi - lo])
                } else {
                    zrow[lo..hi].iter().zip(xrow[j0..].iter().step_by(g.s)).map(|(u, v)| u * v).sum()
                };
                taps[a * g.k + b] += acc;
            }
        }
    }
}

fn geometry(h: usize, w: usize, k: usize, s: usize) -> Geometry {
    Geometry { h, w, gh: grid_dim(h, s), gw: grid_dim(w, s), k, s }
}

/// Strided multi-subband correlation under an explicit coupling.
pub fn analysis(x: &Image, f: &FilterBank, s: usize, coupling: Coupling) -> Result<SubbandCode> {
    if s == 0 {
        return Err(invalid("stride must be >= 1"));
    }
    let groups = check_bank(x.channels(), f, coupling)?;
    let mut z = SubbandCode::zeros(f.num_filters(), groups, x.height(), x.width(), s)?;
    analysis_into(x, f, coupling, &mut z);
    Ok(z)
}

/// Accumulates the analysis of `x` into an existing code of matching layout.
pub(crate) fn analysis_into(x: &Image, f: &FilterBank, coupling: Coupling, z: &mut SubbandCode) {
    let g = geometry(x.height(), x.width(), f.size(), z.stride());
    let n = z.grid_len();
    for (zp, c, fp) in connections(coupling, f.num_filters(), x.channels()) {
        let kk = f.size() * f.size();
        let taps = &f.weights()[fp * kk..(fp + 1) * kk];
        correlate_plane(&g, x.plane(c), taps, &mut z.data[zp * n..(zp + 1) * n]);
    }
}

/// Zero-fill followed by filtering; the adjoint of [`analysis`].
pub fn synthesis(z: &SubbandCode, f: &FilterBank, coupling: Coupling) -> Result<Image> {
    let (h, w) = z.image_dims();
    let channels = match coupling {
        Coupling::Joint => {
            if z.groups() != 1 {
                return Err(shape("joint coupling expects single-group codes"));
            }
            f.channels()
        }
        Coupling::Shared => {
            if f.channels() != 1 {
                return Err(shape("shared coupling needs a single-channel bank"));
            }
            z.groups()
        }
    };
    if z.num_subbands() != f.num_filters() {
        return Err(shape(format!(
            "code has {} subbands, bank has {} filters",
            z.num_subbands(),
            f.num_filters()
        )));
    }
    let mut x = Image::zeros(h, w, channels)?;
    synthesis_into(z, f, coupling, &mut x);
    Ok(x)
}

pub(crate) fn synthesis_into(z: &SubbandCode, f: &FilterBank, coupling: Coupling, x: &mut Image) {
    let g = geometry(x.height(), x.width(), f.size(), z.stride());
    let n = z.grid_len();
    let channels = x.channels();
    let kk = f.size() * f.size();
    for (zp, c, fp) in connections(coupling, f.num_filters(), channels) {
        let taps = &f.weights()[fp * kk..(fp + 1) * kk];
        correlate_adjoint_plane(&g, &z.data[zp * n..(zp + 1) * n], taps, x.plane_mut(c));
    }
}

/// Gradient of the bilinear form `⟨analysis(x, f), z⟩ = ⟨x, synthesis(z, f)⟩`
/// with respect to the filter weights, accumulated into `grad`.
pub fn accumulate_filter_gradient(z: &SubbandCode, x: &Image, coupling: Coupling, grad: &mut FilterBank) {
    let g = geometry(x.height(), x.width(), grad.size(), z.stride());
    let n = z.grid_len();
    let kk = grad.size() * grad.size();
    for (zp, c, fp) in connections(coupling, grad.num_filters(), x.channels()) {
        let taps = &mut grad.weights[fp * kk..(fp + 1) * kk];
        correlate_weights_plane(&g, &z.data[zp * n..(zp + 1) * n], x.plane(c), taps);
    }
}

/// Strided correlation of `x` with every filter of `f` (bank channels must
/// equal image channels). Output grid is `⌈H/s⌉ × ⌈W/s⌉`.
pub fn analysis_conv(x: &Image, f: &FilterBank, s: usize) -> Result<SubbandCode> {
    analysis(x, f, s, Coupling::Joint)
}

/// Zero-fills `z` onto its recorded image grid and filters each subband with
/// the matching filter of `f`, summing over subbands.
pub fn synthesis_conv(z: &SubbandCode, f: &FilterBank, s: usize) -> Result<Image> {
    if z.stride() != s {
        return Err(shape(format!("code stride {} vs requested {s}", z.stride())));
    }
    synthesis(z, f, Coupling::Joint)
}
