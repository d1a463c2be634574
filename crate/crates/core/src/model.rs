//! The unrolled network.
//!
//! Layer `k` maps a code `z⁽ᵏ⁾` to
//!
//! ```text
//! z⁽ᵏ⁺¹⁾ = prox( z⁽ᵏ⁾ − A⁽ᵏ⁾ᵀ( m ∘ B⁽ᵏ⁾z⁽ᵏ⁾ − y ), τ⁽ᵏ⁾ ),     τ⁽ᵏ⁾ = τ₀⁽ᵏ⁾ + τ₁⁽ᵏ⁾·σ/255
//! ```
//!
//! starting from `z⁽⁰⁾ = 0`, and the output is `x̂ = D z⁽ᴷ⁾`. The mask `m` is
//! the identity for plain denoising and a Bayer pattern for joint denoising
//! and demosaicing; `prox` is soft-thresholding or colour block-thresholding.
//!
//! All three kinds of bank are stored as synthesis filters: `B⁽ᵏ⁾` and `D`
//! are applied with [`synthesis`], and `A⁽ᵏ⁾ᵀ` is applied with [`analysis`]
//! (correlation with the stored filters, i.e. convolution with the flipped
//! ones). With `A⁽ᵏ⁾ = B⁽ᵏ⁾ = D` the network is exactly ISTA.

use crate::conv::{analysis, synthesis, Coupling, FilterBank, SubbandCode};
use crate::error::{invalid, shape, Result};
use crate::image::{Image, MaskSignal};
use crate::solvers::{block_threshold_in_place, soft_threshold_in_place, spectral_norm};

/// Initial constant threshold offset.
pub const INIT_TAU0: f64 = 1e-2;
/// Initial noise gain of the thresholds (adaptive models; others start at 0).
pub const INIT_TAU1: f64 = 0.1;
/// Side of the square grid used to normalize initial banks.
pub const INIT_NORM_GRID: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Jdd,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Jdd => "jdd",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "jdd" => Ok(Task::Jdd),
            _ => Err(crate::Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    Soft,
    Block,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Soft => "soft",
            ThresholdMode::Block => "block",
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ThresholdMode::Soft),
            "block" => Ok(ThresholdMode::Block),
            _ => Err(crate::Error::Config(format!("unknown threshold mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of unrolled layers `K`.
    pub unrollings: usize,
    /// Number of subbands `M`.
    pub subbands: usize,
    /// Filter side `√P`.
    pub filter_size: usize,
    pub stride: usize,
    /// Image channels `C`.
    pub channels: usize,
    pub task: Task,
    pub threshold: ThresholdMode,
    /// Whether `τ₁` is learned; when false it stays at zero.
    pub adaptive: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unrollings == 0 || self.subbands == 0 || self.filter_size == 0 || self.stride == 0 {
            return Err(crate::Error::Config("K, M, filter size and stride must be >= 1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(crate::Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.task == Task::Jdd && self.channels != 3 {
            return Err(crate::Error::Config("demosaicing models need 3 channels".into()));
        }
        Ok(())
    }

    pub fn filter_area(&self) -> usize {
        self.filter_size * self.filter_size
    }

    /// Channels of every stored bank: one in block mode (shared across colours).
    pub fn bank_channels(&self) -> usize {
        match self.threshold {
            ThresholdMode::Soft => self.channels,
            ThresholdMode::Block => 1,
        }
    }

    pub fn coupling(&self) -> Coupling {
        match self.threshold {
            ThresholdMode::Soft => Coupling::Joint,
            ThresholdMode::Block => Coupling::Shared,
        }
    }

    /// Colour groups per subband in the code.
    pub fn code_groups(&self) -> usize {
        match self.threshold {
            ThresholdMode::Soft => 1,
            ThresholdMode::Block => self.channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub a: FilterBank,
    pub b: FilterBank,
    pub tau0: Vec<f64>,
    pub tau1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub dict: FilterBank,
}

/// `τ = τ₀ + τ₁·σ/255`.
pub fn effective_thresholds(layer: &LayerParams, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(thresholds(layer, sigma / 255.0))
}

fn thresholds(layer: &LayerParams, sigma_n: f64) -> Vec<f64> {
    layer.tau0.iter().zip(&layer.tau1).map(|(t0, t1)| t0 + t1 * sigma_n).collect()
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Input code `z⁽ᵏ⁾`.
    pub z_in: SubbandCode,
    /// Residual `m ∘ B⁽ᵏ⁾z⁽ᵏ⁾ − y`.
    pub residual: Image,
    /// Pre-threshold code.
    pub pre: SubbandCode,
    pub tau: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Noise level in normalized units (`σ/255`).
    pub sigma_n: f64,
    pub mask: Option<MaskSignal>,
    pub layers: Vec<LayerTrace>,
    pub code: SubbandCode,
    pub output: Image,
}

impl ModelParams {
    pub fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.layers.len() != cfg.unrollings {
            return Err(shape(format!("{} layers for K = {}", self.layers.len(), cfg.unrollings)));
        }
        let expect = FilterBank::zeros(cfg.subbands, cfg.filter_size, cfg.bank_channels());
        let banks = self.layers.iter().flat_map(|l| [&l.a, &l.b]).chain([&self.dict]);
        for bank in banks {
            if !bank.same_shape(&expect) {
                return Err(shape("filter bank does not match the model config"));
            }
        }
        for l in &self.layers {
            if l.tau0.len() != cfg.subbands || l.tau1.len() != cfg.subbands {
                return Err(shape("threshold vector length differs from M"));
            }
        }
        Ok(())
    }

    fn check_input(&self, y: &Image, sigma: f64) -> Result<()> {
        if y.channels() != self.config.channels {
            return Err(shape(format!(
                "model expects {} channels, input has {}",
                self.config.channels,
                y.channels()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(())
    }

    pub(crate) fn run(&self, y: &Image, mask: Option<&MaskSignal>, sigma: f64, keep_trace: bool) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let coupling = cfg.coupling();
        let sigma_n = sigma / 255.0;
        let mut z = SubbandCode::zeros(cfg.subbands, cfg.code_groups(), y.height(), y.width(), cfg.stride)?;
        let mut layers = Vec::with_capacity(if keep_trace { cfg.unrollings } else { 0 });
        for (k, layer) in self.layers.iter().enumerate() {
            let mut residual = if k == 0 {
                // B z⁽⁰⁾ is exactly zero.
                Image::zeros(y.height(), y.width(), y.channels())?
            } else {
                synthesis(&z, &layer.b, coupling)?
            };
            if let Some(m) = mask {
                m.mask_in_place(&mut residual);
            }
            residual.axpy(-1.0, y);
            let grad = analysis(&residual, &layer.a, cfg.stride, coupling)?;
            let mut pre = z.clone();
            pre.axpy(-1.0, &grad);
            let tau = thresholds(layer, sigma_n);
            let mut next = pre.clone();
            match cfg.threshold {
                ThresholdMode::Soft => soft_threshold_in_place(&mut next, &tau),
                ThresholdMode::Block => block_threshold_in_place(&mut next, &tau),
            }
            if keep_trace {
                layers.push(LayerTrace { z_in: z, residual, pre, tau });
            }
            z = next;
        }
        let output = synthesis(&z, &self.dict, coupling)?;
        Ok(ForwardTrace { sigma_n, mask: mask.cloned(), layers, code: z, output })
    }

    /// Forward pass keeping every intermediate for [`crate::grad::backward`].
    pub fn forward_traced(&self, y: &Image, mask: Option<&MaskSignal>, sigma: f64) -> Result<ForwardTrace> {
        self.check_input(y, sigma)?;
        if let Some(m) = mask {
            m.check_image(y)?;
        }
        self.run(y, mask, sigma, true)
    }

    /// Maps `y` to the final code and its reconstruction (no mean handling).
    pub fn forward(&self, y: &Image, sigma: f64) -> Result<(Image, SubbandCode)> {
        self.check_input(y, sigma)?;
        let t = self.run(y, None, sigma, false)?;
        Ok((t.output, t.code))
    }

    /// Masked variant for mosaiced observations `y = m ∘ (x + ν)`.
    pub fn forward_jdd(&self, y: &Image, m: &MaskSignal, sigma: f64) -> Result<(Image, SubbandCode)> {
        self.check_input(y, sigma)?;
        m.check_image(y)?;
        let t = self.run(y, Some(m), sigma, false)?;
        Ok((t.output, t.code))
    }

    /// Denoises with per-image mean subtraction and re-addition.
    pub fn denoise(&self, y: &Image, sigma: f64) -> Result<Image> {
        let mut centered = y.clone();
        let means = centered.subtract_mean();
        let (mut out, _) = self.forward(&centered, sigma)?;
        out.add_offsets(&means);
        Ok(out)
    }

    /// Joint denoising and demosaicing of a mosaic; the per-channel mean of
    /// the observed samples is removed first and added back to the output.
    /// Unobserved samples of `y` are ignored.
    pub fn demosaic(&self, y: &Image, m: &MaskSignal, sigma: f64) -> Result<Image> {
        m.check_image(y)?;
        let means = observed_means(y, m);
        let mut centered = crate::image::apply_mask(m, y)?;
        centered.subtract_offsets(&means, Some(m));
        let (mut out, _) = self.forward_jdd(&centered, m, sigma)?;
        out.add_offsets(&means);
        Ok(out)
    }

    /// Clips filters to the unit ball and thresholds to the non-negative
    /// orthant (τ₁ is pinned to zero for non-adaptive models).
    pub fn project_constraints(&mut self) {
        let adaptive = self.config.adaptive;
        for layer in &mut self.layers {
            project_bank(&mut layer.a);
            project_bank(&mut layer.b);
            layer.tau0.iter_mut().for_each(|t| *t = t.max(0.0));
            if adaptive {
                layer.tau1.iter_mut().for_each(|t| *t = t.max(0.0));
            } else {
                layer.tau1.iter_mut().for_each(|t| *t = 0.0);
            }
        }
        project_bank(&mut self.dict);
    }

    /// Parameter arrays in declared order: per layer `A, B, τ₀, τ₁`, then `D`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.a.weights());
            out.push(l.b.weights());
            out.push(&l.tau0[..]);
            out.push(&l.tau1[..]);
        }
        out.push(self.dict.weights());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.a.weights_mut());
            out.push(l.b.weights_mut());
            out.push(&mut l.tau0[..]);
            out.push(&mut l.tau1[..]);
        }
        out.push(self.dict.weights_mut());
        out
    }

    /// Human-readable names matching [`ModelParams::param_slices`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.layers.len() {
            for p in ["A", "B", "tau0", "tau1"] {
                out.push(format!("layer{k}.{p}"));
            }
        }
        out.push("D".into());
        out
    }

    /// Ties every layer to ISTA on dictionary `dict`: `A = ηD`, `B = D`,
    /// `τ₀ = ηλ`, `τ₁ = 0`.
    pub fn tie_to_ista(&mut self, dict: &FilterBank, eta: f64, lambda: f64) {
        for layer in &mut self.layers {
            layer.a = dict.scaled(eta);
            layer.b = dict.clone();
            layer.tau0.iter_mut().for_each(|t| *t = eta * lambda);
            layer.tau1.iter_mut().for_each(|t| *t = 0.0);
        }
        self.dict = dict.clone();
    }
}

pub(crate) fn observed_means(y: &Image, m: &MaskSignal) -> Vec<f64> {
    (0..y.channels())
        .map(|c| {
            let (sum, count) = y
                .plane(c)
                .iter()
                .zip(m.plane(c))
                .filter(|(_, &b)| b != 0)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

fn project_bank(bank: &mut FilterBank) {
    for m in 0..bank.num_filters() {
        let norm = bank.filter_norm(m);
        if norm > 1.0 {
            bank.filter_mut(m).iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// By-value form of [`ModelParams::project_constraints`].
pub fn project_constraints(mut theta: ModelParams) -> ModelParams {
    theta.project_constraints();
    theta
}

/// Untrained network equal to `K` ISTA iterations on one random dictionary.
///
/// A standard-normal bank is drawn from `seed`, divided by its operator norm
/// on a 128×128 grid, and shared by `D`, every `B⁽ᵏ⁾` and every `A⁽ᵏ⁾`.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut bank = FilterBank::random_normal(config.subbands, config.filter_size, config.bank_channels(), seed);
    let grid = INIT_NORM_GRID.max(config.filter_size);
    let norm = spectral_norm(&bank, config.stride, (grid, grid))?;
    if norm > 0.0 {
        bank.scale(1.0 / norm);
    }
    let layer = LayerParams {
        a: bank.clone(),
        b: bank.clone(),
        tau0: vec![INIT_TAU0; config.subbands],
        tau1: vec![if config.adaptive { INIT_TAU1 } else { 0.0 }; config.subbands],
    };
    Ok(ModelParams { config, layers: vec![layer; config.unrollings], dict: bank })
}

/// Learned scalars: per layer two banks and two threshold vectors, plus `D`.
/// Non-adaptive models drop `τ₁`.
pub fn param_count(config: &ModelConfig) -> usize {
    let bank = config.subbands * config.filter_area() * config.bank_channels();
    let taus = if config.adaptive { 2 } else { 1 } * config.subbands;
    config.unrollings * (2 * bank + taus) + bank
}

/// [`param_count`] without the final dictionary `D`.
pub fn param_count_without_dict(config: &ModelConfig) -> usize {
    param_count(config) - config.subbands * config.filter_area() * config.bank_channels()
}
