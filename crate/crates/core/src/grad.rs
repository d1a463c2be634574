//! Training losses and their exact gradients.
//!
//! Gradients are hand-derived reverse mode through the unrolled layers. With
//! `e = m ∘ Bz − y`, `v = z − Aᵀe` and `z' = prox(v, τ)`, an upstream
//! gradient `dz'` propagates as
//!
//! ```text
//! dv  = Jprox(v, τ)ᵀ dz'           dτ₀ = dτ,  dτ₁ = (σ/255)·dτ
//! dA  = W(−dv, e)                  de  = m ∘ A(−dv)
//! dB  = W(z, de)                   dz  = dv + Bᵀ de
//! ```
//!
//! where `W(code, image)` is the filter gradient of the analysis/synthesis
//! bilinear form. The soft-threshold Jacobian is `1{|v| > τ}` (zero at the
//! kink) and its threshold derivative `−sign(v)·1{|v| > τ}`; block
//! thresholding uses `(1 − τ/‖v‖)I + (τ/‖v‖)v̂v̂ᵀ` on active groups.

use rand_distr::{Distribution, StandardNormal};

use crate::conv::{accumulate_filter_gradient, analysis, synthesis, FilterBank, SubbandCode};
use crate::error::{shape, Error, Result};
use crate::image::{rng_from_seed, Image, MaskSignal};
use crate::model::{ForwardTrace, LayerParams, ModelParams, ThresholdMode};

/// Finite-difference probe step of the divergence estimator, in normalized
/// intensity units.
pub const MC_SURE_STEP: f64 = 1e-3;

/// Gradient of a scalar loss with respect to every entry of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
    pub dict: FilterBank,
}

impl GradientSet {
    pub fn zeros_for(theta: &ModelParams) -> Self {
        let zero_bank = |b: &FilterBank| FilterBank::zeros(b.num_filters(), b.size(), b.channels());
        let layers = theta
            .layers
            .iter()
            .map(|l| LayerParams {
                a: zero_bank(&l.a),
                b: zero_bank(&l.b),
                tau0: vec![0.0; l.tau0.len()],
                tau1: vec![0.0; l.tau1.len()],
            })
            .collect();
        Self { layers, dict: zero_bank(&theta.dict) }
    }

    /// Same order as [`ModelParams::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
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

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
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

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Index (in slice order) of the first group holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.slices().iter().position(|s| s.iter().any(|v| !v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    McSure,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::McSure => "mcsure",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mcsure" => Ok(LossKind::McSure),
            _ => Err(Error::Config(format!("unknown loss '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub kind: LossKind,
    /// For MC-SURE: (‖y − f(y)‖², −Nσ², 2σ²·div).
    pub components: Option<[f64; 3]>,
}

/// A noisy observation as seen by the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Image,
    /// Bayer mask for demosaicing models.
    pub mask: Option<MaskSignal>,
    /// Noise level on the 0–255 scale.
    pub sigma: f64,
}

impl Observation {
    pub fn new(y: Image, sigma: f64) -> Self {
        Self { y, mask: None, sigma }
    }

    pub fn masked(y: Image, mask: MaskSignal, sigma: f64) -> Self {
        Self { y, mask: Some(mask), sigma }
    }
}

/// Any image-to-image map, so estimators can be checked on known operators.
pub trait ImageMap {
    fn apply(&self, y: &Image) -> Result<Image>;
}

impl<F: Fn(&Image) -> Result<Image>> ImageMap for F {
    fn apply(&self, y: &Image) -> Result<Image> {
        self(y)
    }
}

/// The network at a fixed noise level (and mask, for demosaicing).
pub struct NetworkMap<'a> {
    pub theta: &'a ModelParams,
    pub mask: Option<&'a MaskSignal>,
    pub sigma: f64,
}

impl ImageMap for NetworkMap<'_> {
    fn apply(&self, y: &Image) -> Result<Image> {
        match self.mask {
            None => Ok(self.theta.forward(y, self.sigma)?.0),
            Some(m) => Ok(self.theta.forward_jdd(y, m, self.sigma)?.0),
        }
    }
}

fn network_output(theta: &ModelParams, obs: &Observation) -> Result<Image> {
    NetworkMap { theta, mask: obs.mask.as_ref(), sigma: obs.sigma }.apply(&obs.y)
}

/// `‖x − f(y)‖²` summed over pixels and channels.
pub fn loss_mse(theta: &ModelParams, obs: &Observation, x_true: &Image) -> Result<LossReport> {
    let out = network_output(theta, obs)?;
    let value = x_true.sub(&out)?.norm_sq();
    Ok(LossReport { value, kind: LossKind::Mse, components: None })
}

fn standard_normal_like(y: &Image, seed: u64) -> Image {
    let mut rng = rng_from_seed(seed);
    let mut b = Image::zeros(y.height(), y.width(), y.channels()).expect("valid dims");
    for v in b.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    b
}

/// One-probe Monte-Carlo divergence `bᵀ(f(y + hb) − f(y))/h`.
pub fn mc_divergence<F: ImageMap + ?Sized>(f: &F, y: &Image, h: f64, seed: u64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(crate::error::invalid("probe step must be > 0"));
    }
    let b = standard_normal_like(y, seed);
    let mut shifted = y.clone();
    shifted.axpy(h, &b);
    let f1 = f.apply(y)?;
    let f2 = f.apply(&shifted)?;
    Ok(b.dot(&f2.sub(&f1)?) / h)
}

/// `‖y − f(y)‖² − Nσ² + 2σ²·div`, with `σ` given on the 0–255 scale and
/// `N` the number of pixel values. Needs no clean image.
pub fn loss_mcsure<F: ImageMap + ?Sized>(f: &F, y: &Image, sigma: f64, seed: u64) -> Result<LossReport> {
    let s2 = (sigma / 255.0).powi(2);
    let fidelity = y.sub(&f.apply(y)?)?.norm_sq();
    let bias = -(y.data().len() as f64) * s2;
    let div = if s2 > 0.0 { 2.0 * s2 * mc_divergence(f, y, MC_SURE_STEP, seed)? } else { 0.0 };
    Ok(LossReport {
        value: fidelity + bias + div,
        kind: LossKind::McSure,
        components: Some([fidelity, bias, div]),
    })
}

/// Reverse pass through a traced forward evaluation, given `d loss / d x̂`.
pub fn backward(theta: &ModelParams, trace: &ForwardTrace, d_out: &Image) -> Result<GradientSet> {
    let cfg = &theta.config;
    if trace.layers.len() != cfg.unrollings {
        return Err(Error::MissingCache(format!(
            "trace holds {} layers, model has {}",
            trace.layers.len(),
            cfg.unrollings
        )));
    }
    if !d_out.same_shape(&trace.output) {
        return Err(shape("upstream gradient does not match the network output"));
    }
    let coupling = cfg.coupling();
    let mut grads = GradientSet::zeros_for(theta);
    accumulate_filter_gradient(&trace.code, d_out, coupling, &mut grads.dict);
    let mut dz = analysis(d_out, &theta.dict, cfg.stride, coupling)?;

    for k in (0..cfg.unrollings).rev() {
        let lt = &trace.layers[k];
        let layer = &theta.layers[k];
        let (dv, dtau) = match cfg.threshold {
            ThresholdMode::Soft => soft_backward(&lt.pre, &lt.tau, &dz),
            ThresholdMode::Block => block_backward(&lt.pre, &lt.tau, &dz),
        };
        let lg = &mut grads.layers[k];
        for (m, d) in dtau.iter().enumerate() {
            lg.tau0[m] += d;
            if cfg.adaptive {
                lg.tau1[m] += trace.sigma_n * d;
            }
        }
        let mut neg = dv.clone();
        neg.scale(-1.0);
        accumulate_filter_gradient(&neg, &lt.residual, coupling, &mut lg.a);
        if k == 0 {
            // z⁽⁰⁾ = 0: no gradient reaches B⁽⁰⁾ and dz is not needed further.
            break;
        }
        let mut de = synthesis(&neg, &layer.a, coupling)?;
        if let Some(m) = &trace.mask {
            m.mask_in_place(&mut de);
        }
        accumulate_filter_gradient(&lt.z_in, &de, coupling, &mut lg.b);
        let back = analysis(&de, &layer.b, cfg.stride, coupling)?;
        dz = dv;
        dz.axpy(1.0, &back);
    }
    Ok(grads)
}

fn soft_backward(pre: &SubbandCode, tau: &[f64], up: &SubbandCode) -> (SubbandCode, Vec<f64>) {
    let mut dv = SubbandCode::zeros_like(pre);
    let mut dtau = vec![0.0; tau.len()];
    let n = pre.grid_len() * pre.groups();
    for (m, &t) in tau.iter().enumerate() {
        let range = m * n..(m + 1) * n;
        let mut acc = 0.0;
        let (v, u) = (&pre.data()[range.clone()], &up.data()[range.clone()]);
        for ((d, &vi), &ui) in dv.data_mut()[range].iter_mut().zip(v).zip(u) {
            if vi > t {
                *d = ui;
                acc -= ui;
            } else if vi < -t {
                *d = ui;
                acc += ui;
            }
        }
        dtau[m] = acc;
    }
    (dv, dtau)
}

fn block_backward(pre: &SubbandCode, tau: &[f64], up: &SubbandCode) -> (SubbandCode, Vec<f64>) {
    let mut dv = SubbandCode::zeros_like(pre);
    let mut dtau = vec![0.0; tau.len()];
    let n = pre.grid_len();
    let groups = pre.groups();
    for (m, &t) in tau.iter().enumerate() {
        let base = m * groups * n;
        for idx in 0..n {
            let at = |g: usize| base + g * n + idx;
            let norm = (0..groups).map(|g| pre.data()[at(g)].powi(2)).sum::<f64>().sqrt();
            if norm <= t {
                continue;
            }
            // v̂·u
            let proj = (0..groups).map(|g| pre.data()[at(g)] * up.data()[at(g)]).sum::<f64>() / norm;
            let ratio = t / norm;
            for g in 0..groups {
                let vhat = pre.data()[at(g)] / norm;
                dv.data_mut()[at(g)] = (1.0 - ratio) * up.data()[at(g)] + ratio * vhat * proj;
            }
            dtau[m] -= proj;
        }
    }
    (dv, dtau)
}

/// MSE loss and its gradient for one observation.
pub fn mse_value_and_grad(theta: &ModelParams, obs: &Observation, x_true: &Image) -> Result<(LossReport, GradientSet)> {
    let trace = theta.forward_traced(&obs.y, obs.mask.as_ref(), obs.sigma)?;
    let mut diff = trace.output.sub(x_true)?;
    let value = diff.norm_sq();
    diff.scale(2.0);
    let grads = backward(theta, &trace, &diff)?;
    Ok((LossReport { value, kind: LossKind::Mse, components: None }, grads))
}

/// MC-SURE loss and its gradient, differentiating through both forward
/// passes of the divergence estimate.
pub fn mcsure_value_and_grad(theta: &ModelParams, obs: &Observation, seed: u64) -> Result<(LossReport, GradientSet)> {
    let y = &obs.y;
    let s2 = (obs.sigma / 255.0).powi(2);
    let mask = obs.mask.as_ref();
    let t1 = theta.forward_traced(y, mask, obs.sigma)?;
    let resid = y.sub(&t1.output)?;
    let fidelity = resid.norm_sq();
    let bias = -(y.data().len() as f64) * s2;
    // d/d f(y) of the fidelity term.
    let mut d1 = resid;
    d1.scale(-2.0);
    let mut grads;
    let div_term;
    if s2 > 0.0 {
        let b = standard_normal_like(y, seed);
        let mut shifted = y.clone();
        shifted.axpy(MC_SURE_STEP, &b);
        let t2 = theta.forward_traced(&shifted, mask, obs.sigma)?;
        let coef = 2.0 * s2 / MC_SURE_STEP;
        div_term = coef * b.dot(&t2.output.sub(&t1.output)?);
        d1.axpy(-coef, &b);
        let mut d2 = b;
        d2.scale(coef);
        grads = backward(theta, &t1, &d1)?;
        grads.add_assign(&backward(theta, &t2, &d2)?);
    } else {
        div_term = 0.0;
        grads = backward(theta, &t1, &d1)?;
    }
    let report = LossReport {
        value: fidelity + bias + div_term,
        kind: LossKind::McSure,
        components: Some([fidelity, bias, div_term]),
    };
    Ok((report, grads))
}
