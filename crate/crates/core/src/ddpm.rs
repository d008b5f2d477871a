//! Diffusion-process numerics: linear noise schedule, closed-form forward
//! noising, the denoising training loss and ancestral reverse sampling over
//! a pluggable noise-prediction model.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::raster::{FeatureMap, RasterError, RasterGeometry};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum DdpmError {
    #[error("invalid schedule: T = {steps}, beta from {beta_start} to {beta_end}")]
    InvalidSchedule { steps: usize, beta_start: f64, beta_end: f64 },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("step {t} outside [0, {steps}]")]
    StepOutOfRange { t: usize, steps: usize },
}

/// Dense `channels x height x width` array in channel-major order, the same
/// layout as [`FeatureMap`] but in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 3], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self, DdpmError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(DdpmError::ShapeMismatch {
                expected: shape,
                got: [data.len(), 1, 1],
            });
        }
        Ok(Self { shape, data })
    }

    /// Independent standard normal entries.
    pub fn standard_normal<R: Rng + ?Sized>(shape: [usize; 3], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { shape, data }
    }

    pub fn from_feature_map(fm: &FeatureMap) -> Self {
        Self {
            shape: [3, fm.height(), fm.width()],
            data: fm.data().iter().map(|&v| v as f64).collect(),
        }
    }

    /// Converts a three-channel tensor to a feature map on a centered grid.
    pub fn to_feature_map(&self, meters_per_pixel: f64) -> Result<FeatureMap, RasterError> {
        let [c, h, w] = self.shape;
        if c != 3 {
            return Err(RasterError::ShapeMismatch {
                expected: 3 * h * w,
                got: self.data.len(),
            });
        }
        let geometry = RasterGeometry::centered(w, h, meters_per_pixel);
        FeatureMap::from_data(geometry, self.data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Mean squared difference; panics on shape mismatch.
    pub fn mse(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        s / self.data.len().max(1) as f64
    }

    fn check_shape(&self, other: &Tensor) -> Result<(), DdpmError> {
        if self.shape != other.shape {
            return Err(DdpmError::ShapeMismatch {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(())
    }
}

/// Variance schedule. Steps are 1-based as in the diffusion literature:
/// `beta(t)` for `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of beta from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DdpmError> {
        let ok = steps >= 1
            && beta_start.is_finite()
            && beta_end.is_finite()
            && beta_start > 0.0
            && beta_start <= beta_end
            && beta_end < 1.0;
        if !ok {
            return Err(DdpmError::InvalidSchedule {
                steps,
                beta_start,
                beta_end,
            });
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DdpmError> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(DdpmError::InvalidSchedule {
                steps: beta.len(),
                beta_start: beta.first().copied().unwrap_or(f64::NAN),
                beta_end: beta.last().copied().unwrap_or(f64::NAN),
            });
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alpha; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<(), DdpmError> {
        if t > self.steps() {
            return Err(DdpmError::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DdpmError> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

/// Noise prediction `(F_t, t) -> eps_hat`, shape preserving.
pub trait Denoiser: Send + Sync {
    fn predict(&self, ft: &Tensor, t: usize) -> Tensor;
}

impl<F> Denoiser for F
where
    F: Fn(&Tensor, usize) -> Tensor + Send + Sync,
{
    fn predict(&self, ft: &Tensor, t: usize) -> Tensor {
        self(ft, t)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, ft: &Tensor, _t: usize) -> Tensor {
        Tensor::zeros(ft.shape)
    }
}

/// Knows the clean sample and recovers the noise by inverting the forward
/// marginal: `eps = (F_t - sqrt(abar) F0) / sqrt(1 - abar)`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub f0: Tensor,
    pub schedule: NoiseSchedule,
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, ft: &Tensor, t: usize) -> Tensor {
        let ab = self.schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = ft
            .data
            .par_iter()
            .zip(&self.f0.data)
            .map(|(x, x0)| if s > 0.0 { (x - a * x0) / s } else { 0.0 })
            .collect();
        Tensor { shape: ft.shape, data }
    }
}

/// Demo heuristic: takes a Gaussian blur of `F_t / sqrt(abar)`, clipped to
/// the unit range, as the clean estimate and returns the implied noise.
#[derive(Debug, Clone)]
pub struct BlurDenoiser {
    pub sigma_px: f64,
    pub schedule: NoiseSchedule,
}

impl BlurDenoiser {
    pub fn new(schedule: NoiseSchedule) -> Self {
        Self { sigma_px: 1.5, schedule }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur of each channel with clamped borders.
pub fn gaussian_blur(x: &Tensor, sigma: f64) -> Tensor {
    let [c, h, w] = x.shape;
    if sigma <= 0.0 {
        return x.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = Tensor::zeros(x.shape);
    out.data.par_chunks_mut(h * w).zip(x.data.par_chunks(h * w)).for_each(|(dst, src)| {
        let mut tmp = vec![0.0; h * w];
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let cc = (col as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[row * w + cc];
                }
                tmp[row * w + col] = acc;
            }
        }
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let rr = (row as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[rr * w + col];
                }
                dst[row * w + col] = acc;
            }
        }
    });
    debug_assert_eq!(out.shape[0], c);
    out
}

impl Denoiser for BlurDenoiser {
    fn predict(&self, ft: &Tensor, t: usize) -> Tensor {
        let ab = self.schedule.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let scaled = Tensor {
            shape: ft.shape,
            data: ft.data.iter().map(|v| v / a).collect(),
        };
        let x0 = gaussian_blur(&scaled, self.sigma_px).clamped(0.0, 1.0);
        let data = ft
            .data
            .iter()
            .zip(&x0.data)
            .map(|(x, x0)| if s > 0.0 { (x - a * x0) / s } else { 0.0 })
            .collect();
        Tensor { shape: ft.shape, data }
    }
}

/// `sqrt(abar_t) F0 + sqrt(1 - abar_t) eps`; `t = 0` returns `F0`.
pub fn forward_noise(f0: &Tensor, t: usize, eps: &Tensor, ns: &NoiseSchedule) -> Result<Tensor, DdpmError> {
    f0.check_shape(eps)?;
    ns.check_step(t)?;
    let ab = ns.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = f0.data.par_iter().zip(&eps.data).map(|(x, e)| a * x + s * e).collect();
    Ok(Tensor { shape: f0.shape, data })
}

/// Loss at a given step and noise draw: mean over elements of
/// `(eps - eps_hat(F_t, t))^2`.
pub fn training_loss_at(
    f0: &Tensor,
    denoiser: &dyn Denoiser,
    ns: &NoiseSchedule,
    t: usize,
    eps: &Tensor,
) -> Result<f64, DdpmError> {
    if t == 0 {
        return Err(DdpmError::StepOutOfRange { t, steps: ns.steps() });
    }
    let ft = forward_noise(f0, t, eps, ns)?;
    let pred = denoiser.predict(&ft, t);
    eps.check_shape(&pred)?;
    Ok(eps.mse(&pred))
}

/// One Monte-Carlo draw of the training objective: `t ~ U{1..T}`,
/// `eps ~ N(0, I)`.
pub fn training_loss<R: Rng + ?Sized>(f0: &Tensor, denoiser: &dyn Denoiser, ns: &NoiseSchedule, rng: &mut R) -> f64 {
    let t = rng.random_range(1..=ns.steps());
    let eps = Tensor::standard_normal(f0.shape, rng);
    training_loss_at(f0, denoiser, ns, t, &eps).expect("shapes agree by construction")
}

/// One reverse step from `F_t` to `F_{t-1}` given the predicted noise and a
/// noise draw `u` (ignored at `t = 1`).
pub fn reverse_step(ft: &Tensor, eps_hat: &Tensor, t: usize, ns: &NoiseSchedule, u: Option<&Tensor>) -> Tensor {
    let inv = 1.0 / ns.alpha(t).sqrt();
    let coef = ns.beta(t) / (1.0 - ns.alpha_bar(t)).sqrt();
    let sigma = ns.beta(t).sqrt();
    let data = match u {
        Some(u) if t > 1 => ft
            .data
            .par_iter()
            .zip(&eps_hat.data)
            .zip(&u.data)
            .map(|((x, e), n)| inv * (x - coef * e) + sigma * n)
            .collect(),
        _ => ft
            .data
            .par_iter()
            .zip(&eps_hat.data)
            .map(|(x, e)| inv * (x - coef * e))
            .collect(),
    };
    Tensor { shape: ft.shape, data }
}

/// Ancestral sampling from `F_T ~ N(0, I)` down to `F_0` without the final
/// clamp.
pub fn sample_unclamped<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    ns: &NoiseSchedule,
    shape: [usize; 3],
    rng: &mut R,
) -> Tensor {
    let mut x = Tensor::standard_normal(shape, rng);
    for t in (1..=ns.steps()).rev() {
        let eps_hat = denoiser.predict(&x, t);
        let u = (t > 1).then(|| Tensor::standard_normal(shape, rng));
        x = reverse_step(&x, &eps_hat, t, ns, u.as_ref());
    }
    x
}

/// Ancestral sampling, clamped to `[0, 1]` at the end.
pub fn sample<R: Rng + ?Sized>(denoiser: &dyn Denoiser, ns: &NoiseSchedule, shape: [usize; 3], rng: &mut R) -> Tensor {
    sample_unclamped(denoiser, ns, shape, rng).clamped(0.0, 1.0)
}
