//! # Diffusion schedule and DDIM sampling
//!
//! Linear β schedule, cumulative products ᾱ_t, the strided DDIM
//! sub-sequence τ_1 < … < τ_K and the generalized DDIM update
//!
//! ```text
//! y_prev = √ᾱ_prev · ŷ0 + √(1 − ᾱ_prev − σ²) · ε̂ + σ · ε
//! σ      = η · √((1 − ᾱ_prev)/(1 − ᾱ_k)) · √(1 − ᾱ_k/ᾱ_prev)
//! ```
//!
//! with ᾱ_{τ_0} taken as 1 so the last step lands on a clean image.
//! All arithmetic is `f64`; images are `ndarray::Array2<f64>` indexed
//! `[[row, col]]`.

use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("beta range must satisfy 0 < beta_start < beta_end < 1, got {0}..{1}")]
    BetaRange(f64, f64),
    #[error("sampling steps must satisfy 1 <= K <= T, got K={k}, T={t}")]
    StepCount { k: usize, t: usize },
    #[error("eta must lie in [0, 1], got {0}")]
    Eta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Training steps T.
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Sampling steps K.
    pub sampling_steps: usize,
    pub eta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { train_steps: 1000, beta_start: 1e-4, beta_end: 0.02, sampling_steps: 100, eta: 0.85 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    /// β_1..β_T stored at index t-1.
    betas: Vec<f64>,
    /// ᾱ_0..ᾱ_T with ᾱ_0 = 1.
    alpha_bar: Vec<f64>,
    /// τ_1..τ_K stored at index k-1, strictly increasing.
    tau: Vec<usize>,
}

/// Coefficients of one DDIM update from τ_k to τ_{k-1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimCoefficients {
    pub alpha_bar: f64,
    pub alpha_bar_prev: f64,
    pub sigma: f64,
    /// √(1 − ᾱ_prev − σ²), radicand clamped at zero.
    pub eps_coef: f64,
    /// Set when the radicand above came out negative.
    pub clamped: bool,
}

pub fn build_schedule(config: ScheduleConfig) -> Result<DiffusionSchedule, ScheduleError> {
    let ScheduleConfig { train_steps: t, beta_start, beta_end, sampling_steps: k, eta } = config;
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(ScheduleError::BetaRange(beta_start, beta_end));
    }
    if !(1..=t).contains(&k) {
        return Err(ScheduleError::StepCount { k, t });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(ScheduleError::Eta(eta));
    }

    let betas: Vec<f64> = if t == 1 {
        vec![beta_start]
    } else {
        let step = (beta_end - beta_start) / (t - 1) as f64;
        (0..t).map(|i| if i == t - 1 { beta_end } else { beta_start + step * i as f64 }).collect()
    };
    let mut alpha_bar = Vec::with_capacity(t + 1);
    alpha_bar.push(1.0);
    for beta in &betas {
        let prev = *alpha_bar.last().unwrap();
        alpha_bar.push(prev * (1.0 - beta));
    }

    let mut tau: Vec<usize> = (1..=k).map(|i| ((t * i) as f64 / k as f64).round() as usize).collect();
    tau.dedup();

    Ok(DiffusionSchedule { config, betas, alpha_bar, tau })
}

impl DiffusionSchedule {
    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn sampling_steps(&self) -> usize {
        self.tau.len()
    }

    pub fn eta(&self) -> f64 {
        self.config.eta
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bar_table(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// τ_k for `k` in `1..=K`; `tau(0)` is 0.
    pub fn tau(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.tau[k - 1]
        }
    }

    pub fn taus(&self) -> &[usize] {
        &self.tau
    }

    pub fn alpha_bar_tau(&self, k: usize) -> f64 {
        self.alpha_bar[self.tau(k)]
    }

    /// σ_{τ_k} for the step τ_k → τ_{k-1}.
    pub fn sigma(&self, k: usize) -> f64 {
        let a = self.alpha_bar_tau(k);
        let a_prev = self.alpha_bar_tau(k - 1);
        self.config.eta * ((1.0 - a_prev) / (1.0 - a)).sqrt() * (1.0 - a / a_prev).sqrt()
    }

    pub fn ddim_coefficients(&self, k: usize) -> DdimCoefficients {
        assert!(k >= 1 && k <= self.sampling_steps(), "DDIM index {k} out of range");
        let alpha_bar = self.alpha_bar_tau(k);
        let alpha_bar_prev = self.alpha_bar_tau(k - 1);
        let sigma = self.sigma(k);
        let radicand = 1.0 - alpha_bar_prev - sigma * sigma;
        DdimCoefficients {
            alpha_bar,
            alpha_bar_prev,
            sigma,
            eps_coef: radicand.max(0.0).sqrt(),
            clamped: radicand < 0.0,
        }
    }

    /// Plain-text table for debugging: one line per sampling step.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "# T={} beta_start={} beta_end={} K={} eta={}",
            c.train_steps,
            c.beta_start,
            c.beta_end,
            self.sampling_steps(),
            c.eta
        );
        let _ = writeln!(out, "k\ttau\talpha_bar\talpha_bar_prev\tsigma");
        for k in (1..=self.sampling_steps()).rev() {
            let co = self.ddim_coefficients(k);
            let _ = writeln!(
                out,
                "{k}\t{}\t{:.17e}\t{:.17e}\t{:.17e}",
                self.tau(k),
                co.alpha_bar,
                co.alpha_bar_prev,
                co.sigma
            );
        }
        out
    }
}

/// Standard normal grid drawn in row-major order.
pub fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Forward diffusion `√ᾱ_t y0 + √(1−ᾱ_t) ε`.
pub fn q_sample(y0: &Array2<f64>, t: usize, noise: &Array2<f64>, sched: &DiffusionSchedule) -> Array2<f64> {
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Zip::from(y0).and(noise).map_collect(|&y, &e| sa * y + sn * e)
}

/// Clean-image estimate `(y_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_y0(y_t: &Array2<f64>, eps_hat: &Array2<f64>, t: usize, sched: &DiffusionSchedule) -> Array2<f64> {
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Zip::from(y_t).and(eps_hat).map_collect(|&y, &e| (y - sn * e) / sa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdimStep {
    pub y_prev: Array2<f64>,
    pub clamped: bool,
}

/// One DDIM update from τ_k to τ_{k-1}, drawing fresh noise from `rng`.
pub fn ddim_step<R: Rng + ?Sized>(
    y0_hat: &Array2<f64>,
    eps_hat: &Array2<f64>,
    k: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> DdimStep {
    let noise = standard_normal(y0_hat.dim(), rng);
    ddim_step_with_noise(y0_hat, eps_hat, &noise, k, sched)
}

pub fn ddim_step_with_noise(
    y0_hat: &Array2<f64>,
    eps_hat: &Array2<f64>,
    noise: &Array2<f64>,
    k: usize,
    sched: &DiffusionSchedule,
) -> DdimStep {
    let c = sched.ddim_coefficients(k);
    let sa = c.alpha_bar_prev.sqrt();
    let y_prev =
        Zip::from(y0_hat).and(eps_hat).and(noise).map_collect(|&y0, &e, &z| sa * y0 + c.eps_coef * e + c.sigma * z);
    DdimStep { y_prev, clamped: c.clamped }
}

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("denoiser returned shape {got:?}, expected {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("denoiser returned a non-finite value")]
    NonFinite,
    #[error("timestep {t} outside the denoiser's schedule (T = {max})")]
    Timestep { t: usize, max: usize },
    #[error(transparent)]
    Other(Box<dyn std::error::Error + Send + Sync>),
}

/// Noise predictor ε_θ(y_t, t).
pub trait Denoiser {
    fn predict_eps(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, DenoiserError>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_eps(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, DenoiserError> {
        (**self).predict_eps(y_t, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &mut D {
    fn predict_eps(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, DenoiserError> {
        (**self).predict_eps(y_t, t)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

pub fn zero_denoiser() -> ZeroDenoiser {
    ZeroDenoiser
}

impl Denoiser for ZeroDenoiser {
    fn predict_eps(&mut self, y_t: &Array2<f64>, _t: usize) -> Result<Array2<f64>, DenoiserError> {
        Ok(Array2::zeros(y_t.dim()))
    }
}

/// Independent per-pixel Gaussian prior N(mean, var).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Array2<f64>, var: Array2<f64>) -> Result<Self, DenoiserError> {
        if mean.dim() != var.dim() {
            return Err(DenoiserError::Shape { expected: mean.dim(), got: var.dim() });
        }
        if var.iter().any(|&v| !(v > 0.0 && v.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(DenoiserError::NonFinite);
        }
        Ok(Self { mean, var })
    }

    pub fn constant(shape: (usize, usize), mean: f64, var: f64) -> Result<Self, DenoiserError> {
        Self::new(Array2::from_elem(shape, mean), Array2::from_elem(shape, var))
    }

    /// Constant prior with the sample mean and (population) variance of
    /// `values`, the variance floored at `min_var`.
    pub fn fitted(
        shape: (usize, usize),
        values: impl IntoIterator<Item = f64>,
        min_var: f64,
    ) -> Result<Self, DenoiserError> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Err(DenoiserError::NonFinite);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(min_var);
        Self::constant(shape, mean, var)
    }
}

/// Posterior mean E[y0 | y_t] for a Gaussian prior at signal level ᾱ.
pub fn gaussian_posterior_mean(mean: f64, var: f64, alpha_bar: f64, y_t: f64) -> f64 {
    let sa = alpha_bar.sqrt();
    mean + sa * var / (alpha_bar * var + 1.0 - alpha_bar) * (y_t - sa * mean)
}

/// Exact MMSE noise predictor for a [`GaussianPrior`].
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    prior: GaussianPrior,
    alpha_bar: Vec<f64>,
}

pub fn gaussian_denoiser(prior: GaussianPrior, sched: &DiffusionSchedule) -> GaussianDenoiser {
    GaussianDenoiser { prior, alpha_bar: sched.alpha_bar_table().to_vec() }
}

impl GaussianDenoiser {
    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn posterior_mean(&self, y_t: &Array2<f64>, t: usize) -> Array2<f64> {
        let a = self.alpha_bar[t];
        Zip::from(y_t)
            .and(&self.prior.mean)
            .and(&self.prior.var)
            .map_collect(|&y, &m, &v| gaussian_posterior_mean(m, v, a, y))
    }
}

impl Denoiser for GaussianDenoiser {
    fn predict_eps(&mut self, y_t: &Array2<f64>, t: usize) -> Result<Array2<f64>, DenoiserError> {
        if y_t.dim() != self.prior.mean.dim() {
            return Err(DenoiserError::Shape { expected: self.prior.mean.dim(), got: y_t.dim() });
        }
        if t == 0 || t >= self.alpha_bar.len() {
            return Err(DenoiserError::Timestep { t, max: self.alpha_bar.len() - 1 });
        }
        let a = self.alpha_bar[t];
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let y0 = self.posterior_mean(y_t, t);
        Ok(Zip::from(y_t).and(&y0).map_collect(|&y, &x| (y - sa * x) / sn))
    }
}

/// Checks shape and finiteness of a denoiser output.
pub fn checked_eps(eps: Array2<f64>, expected: (usize, usize)) -> Result<Array2<f64>, DenoiserError> {
    if eps.dim() != expected {
        return Err(DenoiserError::Shape { expected, got: eps.dim() });
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(DenoiserError::NonFinite);
    }
    Ok(eps)
}

/// Unconditional DDIM sampling from y_T ~ N(0, I).
pub fn ddim_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &mut D,
    sched: &DiffusionSchedule,
    shape: (usize, usize),
    rng: &mut R,
) -> Result<Array2<f64>, DenoiserError> {
    let mut y = standard_normal(shape, rng);
    for k in (1..=sched.sampling_steps()).rev() {
        let t = sched.tau(k);
        let eps = checked_eps(denoiser.predict_eps(&y, t)?, shape)?;
        let y0 = predict_y0(&y, &eps, t, sched);
        y = ddim_step(&y0, &eps, k, sched, rng).y_prev;
    }
    Ok(y)
}
