//! Reference sparse coding: thresholding operators, the BPDN objective, ISTA,
//! the universal threshold and operator-norm estimation.
//!
//! These are the non-learned building blocks the unrolled network is checked
//! against; an untrained network with tied weights reproduces [`ista`].

use crate::conv::{analysis, synthesis, Coupling, FilterBank, SubbandCode};
use crate::error::{invalid, shape, Result};
use crate::image::Image;

/// Scalar soft-thresholding `sign(v)·max(0, |v| − τ)`.
#[inline]
pub fn soft(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

fn check_thresholds(code: &SubbandCode, tau: &[f64]) -> Result<()> {
    if tau.len() != code.num_subbands() {
        return Err(shape(format!("{} thresholds for {} subbands", tau.len(), code.num_subbands())));
    }
    if tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(invalid("thresholds must be non-negative"));
    }
    Ok(())
}

/// Elementwise soft-thresholding with threshold `tau[m]` on subband `m`.
pub fn soft_threshold(v: &SubbandCode, tau: &[f64]) -> Result<SubbandCode> {
    check_thresholds(v, tau)?;
    let mut out = v.clone();
    soft_threshold_in_place(&mut out, tau);
    Ok(out)
}

pub(crate) fn soft_threshold_in_place(v: &mut SubbandCode, tau: &[f64]) {
    let n = v.grid_len() * v.groups();
    for (m, chunk) in v.data_mut().chunks_mut(n).enumerate() {
        let t = tau[m];
        chunk.iter_mut().for_each(|x| *x = soft(*x, t));
    }
}

/// Group shrinkage `v·max(0, ‖v‖ − τ)/‖v‖` applied to the colour vector of
/// every subband and grid position. Zero groups map to zero.
pub fn block_threshold(v: &SubbandCode, tau: &[f64]) -> Result<SubbandCode> {
    check_thresholds(v, tau)?;
    let mut out = v.clone();
    block_threshold_in_place(&mut out, tau);
    Ok(out)
}

pub(crate) fn block_threshold_in_place(v: &mut SubbandCode, tau: &[f64]) {
    let n = v.grid_len();
    let groups = v.groups();
    for (m, &t) in tau.iter().enumerate().take(v.num_subbands()) {
        let base = m * groups * n;
        let data = v.data_mut();
        for idx in 0..n {
            let norm = (0..groups).map(|g| data[base + g * n + idx].powi(2)).sum::<f64>().sqrt();
            let gain = if norm > t { (norm - t) / norm } else { 0.0 };
            for g in 0..groups {
                data[base + g * n + idx] *= gain;
            }
        }
    }
}

/// ℓ2,1 norm: sum over subbands and positions of the colour-vector norms.
pub fn group_norm(z: &SubbandCode) -> f64 {
    let n = z.grid_len();
    let groups = z.groups();
    let mut acc = 0.0;
    for m in 0..z.num_subbands() {
        let sb = z.subband(m);
        for idx in 0..n {
            acc += (0..groups).map(|g| sb[g * n + idx].powi(2)).sum::<f64>().sqrt();
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupMode {
    /// ℓ1 penalty, soft-thresholding, bank channels equal image channels.
    Elementwise,
    /// ℓ2,1 penalty over colour coefficients with a shared grayscale bank.
    ColorGroups,
}

impl GroupMode {
    pub fn coupling(self) -> Coupling {
        match self {
            GroupMode::Elementwise => Coupling::Joint,
            GroupMode::ColorGroups => Coupling::Shared,
        }
    }
}

/// Convolutional basis pursuit denoising: `½‖y − Dz‖² + λ·penalty(z)`.
#[derive(Clone, Debug)]
pub struct BpdnProblem {
    pub y: Image,
    pub dict: FilterBank,
    pub stride: usize,
    pub lambda: f64,
    pub eta: f64,
    pub group_mode: GroupMode,
}

impl BpdnProblem {
    pub fn new(y: Image, dict: FilterBank, stride: usize, lambda: f64, eta: f64, group_mode: GroupMode) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(eta > 0.0) {
            return Err(invalid(format!("step size must be > 0, got {eta}")));
        }
        if stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        Ok(Self { y, dict, stride, lambda, eta, group_mode })
    }

    fn coupling(&self) -> Coupling {
        self.group_mode.coupling()
    }

    pub fn synthesize(&self, z: &SubbandCode) -> Result<Image> {
        synthesis(z, &self.dict, self.coupling())
    }

    pub fn analyze(&self, x: &Image) -> Result<SubbandCode> {
        analysis(x, &self.dict, self.stride, self.coupling())
    }

    /// The all-zero starting code.
    pub fn zero_code(&self) -> Result<SubbandCode> {
        let groups = match self.group_mode {
            GroupMode::Elementwise => 1,
            GroupMode::ColorGroups => self.y.channels(),
        };
        SubbandCode::zeros(self.dict.num_filters(), groups, self.y.height(), self.y.width(), self.stride)
    }
}

pub fn bpdn_objective(p: &BpdnProblem, z: &SubbandCode) -> Result<f64> {
    let recon = p.synthesize(z)?;
    if !recon.same_shape(&p.y) {
        return Err(shape(format!("reconstruction {:?} vs observation {:?}", recon.dims(), p.y.dims())));
    }
    let fidelity = 0.5 * recon.sub(&p.y)?.norm_sq();
    let penalty = match p.group_mode {
        GroupMode::Elementwise => z.data().iter().map(|v| v.abs()).sum::<f64>(),
        GroupMode::ColorGroups => group_norm(z),
    };
    Ok(fidelity + p.lambda * penalty)
}

/// One proximal-gradient step `prox(z − ηDᵀ(Dz − y), ηλ)`.
pub fn ista_step(p: &BpdnProblem, z: &SubbandCode) -> Result<SubbandCode> {
    let mut residual = p.synthesize(z)?;
    residual.axpy(-1.0, &p.y);
    let grad = p.analyze(&residual)?;
    let mut v = z.clone();
    v.axpy(-p.eta, &grad);
    let tau = vec![p.eta * p.lambda; v.num_subbands()];
    match p.group_mode {
        GroupMode::Elementwise => soft_threshold_in_place(&mut v, &tau),
        GroupMode::ColorGroups => block_threshold_in_place(&mut v, &tau),
    }
    Ok(v)
}

/// Runs `iterations` ISTA steps from `z = 0`, calling `visit(k, z_k)` after
/// every step. Returns the final code.
pub fn ista_with(
    p: &BpdnProblem,
    iterations: usize,
    mut visit: impl FnMut(usize, &SubbandCode),
) -> Result<SubbandCode> {
    if iterations == 0 {
        return Err(invalid("ISTA needs at least one iteration"));
    }
    let mut z = p.zero_code()?;
    for k in 1..=iterations {
        z = ista_step(p, &z)?;
        visit(k, &z);
    }
    Ok(z)
}

/// ISTA from zero; returns the final code and the objective at every iterate
/// (including the starting point, so the trace has `iterations + 1` entries).
pub fn ista(p: &BpdnProblem, iterations: usize) -> Result<(SubbandCode, Vec<f64>)> {
    let mut trace = vec![bpdn_objective(p, &p.zero_code()?)?];
    let mut err = None;
    let z = ista_with(p, iterations, |_, z| match bpdn_objective(p, z) {
        Ok(v) => trace.push(v),
        Err(e) => err = Some(e),
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok((z, trace)),
    }
}

/// `σ·√(2 ln N)`.
pub fn universal_threshold(sigma: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("pixel count must be >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be >= 0"));
    }
    Ok(sigma * (2.0 * (n as f64).ln()).sqrt())
}

pub const POWER_ITERATION_TOL: f64 = 1e-6;
pub const POWER_ITERATION_MAX: usize = 100;

/// Largest singular value of `x ↦ analysis_conv(x, f, s)` on `dims` images.
pub fn spectral_norm(f: &FilterBank, s: usize, dims: (usize, usize)) -> Result<f64> {
    spectral_norm_with(f, s, dims, POWER_ITERATION_TOL, POWER_ITERATION_MAX)
}

/// Power iteration on `AᵀA` from the normalized all-ones vector, stopping
/// when the eigenvalue estimate changes by less than `tol` (relative).
pub fn spectral_norm_with(f: &FilterBank, s: usize, dims: (usize, usize), tol: f64, max_iter: usize) -> Result<f64> {
    let (h, w) = dims;
    if h < f.size() || w < f.size() {
        return Err(invalid(format!("{h}x{w} grid is smaller than the {}-tap filters", f.size())));
    }
    let c = f.channels();
    let mut x = Image::from_vec(h, w, c, vec![1.0 / ((h * w * c) as f64).sqrt(); h * w * c])?;
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let ax = analysis(&x, f, s, Coupling::Joint)?;
        let y = synthesis(&ax, f, Coupling::Joint)?;
        let next = x.dot(&y);
        let norm = y.norm_sq().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let converged = (next - lambda).abs() <= tol * next.abs();
        lambda = next;
        x = y;
        x.scale(1.0 / norm);
        if converged {
            break;
        }
    }
    Ok(lambda.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code_from(values: Vec<f64>, groups: usize) -> SubbandCode {
        let n = values.len() / groups;
        SubbandCode::from_vec(1, groups, 1, n, 1, values).unwrap()
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft(3.0, 1.0), 2.0);
        assert_eq!(soft(-3.0, 1.0), -2.0);
        assert_eq!(soft(0.5, 1.0), 0.0);
        assert_eq!(soft(-0.7, 0.0), -0.7);
        let z = code_from(vec![3.0, -3.0, 0.5], 1);
        assert_eq!(soft_threshold(&z, &[1.0]).unwrap().data(), &[2.0, -2.0, 0.0]);
        assert!(soft_threshold(&z, &[-0.1]).is_err());
        assert!(soft_threshold(&z, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn block_threshold_values() {
        // group (3,4,0) has norm 5; gain (5-1)/5
        let z = code_from(vec![3.0, 4.0, 0.0], 3);
        let out = block_threshold(&z, &[1.0]).unwrap();
        assert!((out.data()[0] - 2.4).abs() < 1e-15);
        assert!((out.data()[1] - 3.2).abs() < 1e-15);
        assert_eq!(out.data()[2], 0.0);
        let zero = code_from(vec![0.0; 3], 3);
        assert_eq!(block_threshold(&zero, &[0.5]).unwrap().data(), &[0.0; 3]);
        let scalars = code_from(vec![2.5, -0.3, -4.0], 1);
        let bt = block_threshold(&scalars, &[1.0]).unwrap();
        let st = soft_threshold(&scalars, &[1.0]).unwrap();
        for (a, b) in bt.data().iter().zip(st.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn universal_threshold_values() {
        assert_eq!(universal_threshold(0.0, 100).unwrap(), 0.0);
        assert_eq!(universal_threshold(3.0, 1).unwrap(), 0.0);
        assert!((universal_threshold(25.0, 65536).unwrap() - 117.7410).abs() < 1e-3);
        assert!(universal_threshold(1.0, 0).is_err());
        let a = universal_threshold(10.0, 100).unwrap();
        assert!(universal_threshold(11.0, 100).unwrap() > a);
        assert!(universal_threshold(10.0, 101).unwrap() > a);
    }

    #[test]
    fn spectral_norm_of_impulse_and_scaling() {
        let id = FilterBank::impulse(3, 1);
        assert!((spectral_norm(&id, 1, (16, 16)).unwrap() - 1.0).abs() < 1e-6);
        let f = FilterBank::random_normal(3, 3, 1, 4);
        let base = spectral_norm(&f, 1, (12, 12)).unwrap();
        let tripled = spectral_norm(&f.scaled(3.0), 1, (12, 12)).unwrap();
        assert!((tripled - 3.0 * base).abs() < 1e-9 * base);
        assert_eq!(spectral_norm(&FilterBank::zeros(2, 3, 1), 1, (8, 8)).unwrap(), 0.0);
        assert!(spectral_norm(&f, 1, (2, 8)).is_err());
    }

    #[test]
    fn ista_with_identity_dictionary_is_soft_thresholding() {
        let y = Image::from_vec(2, 3, 1, vec![0.5, -2.0, 1.2, 0.0, 3.0, -0.1]).unwrap();
        let p = BpdnProblem::new(y.clone(), FilterBank::impulse(3, 1), 1, 0.4, 1.0, GroupMode::Elementwise).unwrap();
        let (z, _) = ista(&p, 1).unwrap();
        let expect: Vec<f64> = y.data().iter().map(|&v| soft(v, 0.4)).collect();
        assert_eq!(z.data(), expect.as_slice());
        let (z5, _) = ista(&p, 5).unwrap();
        assert_eq!(z5.data(), expect.as_slice());
    }

    #[test]
    fn large_threshold_keeps_zero_code() {
        let y = Image::from_fn(8, 8, 1, |_, i, j| ((i * 3 + j) % 5) as f64 / 5.0).unwrap();
        let d = FilterBank::random_normal(3, 3, 1, 9);
        let dty = analysis(&y, &d, 1, Coupling::Joint).unwrap();
        let eta = 0.1;
        let lambda = dty.max_abs();
        let p = BpdnProblem::new(y, d, 1, lambda, eta, GroupMode::Elementwise).unwrap();
        let (z, trace) = ista(&p, 4).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn objective_at_zero_and_without_penalty() {
        let y = Image::from_fn(6, 6, 1, |_, i, j| (i as f64 - j as f64) / 6.0).unwrap();
        let d = FilterBank::random_normal(2, 3, 1, 1);
        let p = BpdnProblem::new(y.clone(), d, 1, 0.3, 0.5, GroupMode::Elementwise).unwrap();
        let zero = p.zero_code().unwrap();
        assert!((bpdn_objective(&p, &zero).unwrap() - 0.5 * y.norm_sq()).abs() < 1e-15);
        let mut z = zero.clone();
        z.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 * 0.1 - 0.3);
        let mut p0 = p.clone();
        p0.lambda = 0.0;
        let recon = p.synthesize(&z).unwrap();
        let fid = 0.5 * recon.sub(&y).unwrap().norm_sq();
        assert!((bpdn_objective(&p0, &z).unwrap() - fid).abs() < 1e-12);
        assert!(BpdnProblem::new(y.clone(), FilterBank::impulse(3, 1), 1, 0.1, 0.0, GroupMode::Elementwise).is_err());
        assert!(BpdnProblem::new(y, FilterBank::impulse(3, 1), 1, -0.1, 1.0, GroupMode::Elementwise).is_err());
    }

    #[test]
    fn ista_rejects_zero_iterations() {
        let y = Image::zeros(4, 4, 1).unwrap();
        let p = BpdnProblem::new(y, FilterBank::impulse(3, 1), 1, 0.1, 1.0, GroupMode::Elementwise).unwrap();
        assert!(ista(&p, 0).is_err());
    }

    proptest! {
        #[test]
        fn soft_is_nonexpansive(a in -10.0f64..10.0, b in -10.0f64..10.0, t in 0.0f64..5.0) {
            prop_assert!((soft(a, t) - soft(b, t)).abs() <= (a - b).abs() + 1e-15);
        }

        #[test]
        fn block_shrinks_norm_by_min_tau(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0, t in 0.0f64..6.0) {
            let code = code_from(vec![x, y, z], 3);
            let out = block_threshold(&code, &[t]).unwrap();
            let n_in = (x * x + y * y + z * z).sqrt();
            let n_out = out.norm_sq().sqrt();
            prop_assert!((n_in - n_out - t.min(n_in)).abs() < 1e-12);
            if n_out > 0.0 {
                // direction preserved
                let cos = code.dot(&out) / (n_in * n_out);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }
    }
}
