//! # Masked range/null-space restoration
//!
//! Reverse diffusion conditioned on a sparse, noisy depth observation.
//! Every step estimates the clean image, pulls observed pixels toward the
//! observation, zeroes everything outside the boundary mask and takes a
//! DDIM step.
//!
//! The degradation operator is a binary pixel mask `A`, so `A† = A` and the
//! range-space correction `Σ A†(A y − ỹ)` acts only on observed pixels.
//! `Σ` is the scalar `λ` from [`sigma_scale`].

use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{BoundaryMask, CameraError, DepthImage};
use crate::diffusion::{checked_eps, predict_y0, standard_normal, Denoiser, DenoiserError, DiffusionSchedule};

/// Observation noise used when none is configured, in normalized depth units.
pub const DEFAULT_SIGMA_Y: f64 = 0.16;

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("shape mismatch: {what} is {got:?}, expected {expected:?}")]
    Shape { what: &'static str, expected: (usize, usize), got: (usize, usize) },
    #[error("observed pixel ({0}, {1}) lies outside the boundary mask")]
    ObservedOutsideMask(usize, usize),
    #[error("observation is non-zero at unobserved pixel ({0}, {1})")]
    UnobservedNonZero(usize, usize),
    #[error("observation is not finite at ({0}, {1})")]
    NonFiniteObservation(usize, usize),
    #[error("sigma_y must be finite and >= 0, got {0}")]
    SigmaY(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error("denoiser failed at step k={k} (t={t}): {source}")]
    Denoiser {
        k: usize,
        t: usize,
        #[source]
        source: DenoiserError,
    },
    #[error("non-finite value in {stage} at step k={k} (t={t})")]
    NonFinite { k: usize, t: usize, stage: &'static str },
    #[error("image has no normalization record")]
    MissingRange,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Binary diagonal degradation operator over an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOperator {
    pub omega: Array2<bool>,
}

impl MaskOperator {
    pub fn new(omega: Array2<bool>) -> Self {
        Self { omega }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.omega.dim()
    }

    pub fn observed_count(&self) -> usize {
        self.omega.iter().filter(|&&o| o).count()
    }

    /// `A x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        Zip::from(x).and(&self.omega).map_collect(|&v, &o| if o { v } else { 0.0 })
    }

    /// `A† x`, identical to `A x` for a binary diagonal.
    pub fn pinv(&self, x: &Array2<f64>) -> Array2<f64> {
        self.apply(x)
    }

    /// `(I − A†A) x`.
    pub fn null_part(&self, x: &Array2<f64>) -> Array2<f64> {
        Zip::from(x).and(&self.omega).map_collect(|&v, &o| if o { 0.0 } else { v })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationProblem {
    /// Normalized observation, 0 at unobserved pixels.
    pub y_tilde: Array2<f64>,
    pub operator: MaskOperator,
    pub mask: BoundaryMask,
    pub sigma_y: f64,
}

impl RestorationProblem {
    pub fn new(
        y_tilde: Array2<f64>,
        operator: MaskOperator,
        mask: BoundaryMask,
        sigma_y: f64,
    ) -> Result<Self, RestoreError> {
        let p = Self { y_tilde, operator, mask, sigma_y };
        p.validate()?;
        Ok(p)
    }

    /// Builds the problem from a normalized depth image: `A` is its validity
    /// grid and `M` the bounding box of valid pixels.
    pub fn from_depth(img: &DepthImage, sigma_y: f64) -> Result<Self, RestoreError> {
        if img.range.is_none() {
            return Err(RestoreError::MissingRange);
        }
        let mask = crate::camera::boundary_mask(img)?;
        let y_tilde = Zip::from(&img.values).and(&img.valid).map_collect(|&v, &ok| if ok { v } else { 0.0 });
        Self::new(y_tilde, MaskOperator::new(img.valid.clone()), mask, sigma_y)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.y_tilde.dim()
    }

    pub fn validate(&self) -> Result<(), RestoreError> {
        let dim = self.y_tilde.dim();
        for (what, got) in [("observation mask", self.operator.dim()), ("boundary mask", self.mask.grid.dim())] {
            if got != dim {
                return Err(RestoreError::Shape { what, expected: dim, got });
            }
        }
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            return Err(RestoreError::SigmaY(self.sigma_y));
        }
        for ((r, c), &v) in self.y_tilde.indexed_iter() {
            if !v.is_finite() {
                return Err(RestoreError::NonFiniteObservation(r, c));
            }
            let observed = self.operator.omega[[r, c]];
            if observed && !self.mask.grid[[r, c]] {
                return Err(RestoreError::ObservedOutsideMask(r, c));
            }
            if !observed && v != 0.0 {
                return Err(RestoreError::UnobservedNonZero(r, c));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Boundary mask applied every step.
    Masked,
    /// Boundary mask replaced by identity.
    Vanilla,
}

/// How observed pixels are re-noised in the DDIM step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseRule {
    /// While the schedule noise exceeds the observation noise (`λ = 1`),
    /// observed pixels are the observation plus noise topped up to the
    /// schedule level. After that the observation is already carried by the
    /// trajectory and observed pixels take the plain DDIM update.
    #[default]
    Absorb,
    /// `λ` from [`sigma_scale`] applied at every step and observed pixels
    /// re-noised with `γ`.
    Ddnm,
}

/// `(1 − λ)·y0 + λ·ỹ` on observed pixels, `y0` elsewhere.
pub fn range_null_correct(
    y0_pred: &Array2<f64>,
    problem: &RestorationProblem,
    lambda: f64,
) -> Result<Array2<f64>, RestoreError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RestoreError::Lambda(lambda));
    }
    if y0_pred.dim() != problem.dim() {
        return Err(RestoreError::Shape { what: "estimate", expected: problem.dim(), got: y0_pred.dim() });
    }
    Ok(Zip::from(y0_pred).and(&problem.y_tilde).and(&problem.operator.omega).map_collect(|&y, &obs, &o| {
        if o {
            (1.0 - lambda) * y + lambda * obs
        } else {
            y
        }
    }))
}

/// Zeroes every pixel outside `mask`; pixels inside are untouched.
pub fn apply_boundary(y: &Array2<f64>, mask: &BoundaryMask) -> Array2<f64> {
    Zip::from(y).and(&mask.grid).map_collect(|&v, &m| if m { v } else { 0.0 })
}

/// Returns `(λ, γ)` for a step whose target signal level is `alpha_bar_prev`.
///
/// `λ = min(1, s/(√ᾱ σ_y))` and `γ² = max(0, s² − ᾱ λ² σ_y²)` with
/// `s = √(1 − ᾱ)`.
pub fn sigma_scale(alpha_bar_prev: f64, sigma_y: f64) -> (f64, f64) {
    let s_tot = (1.0 - alpha_bar_prev).max(0.0).sqrt();
    let lambda = if sigma_y == 0.0 { 1.0 } else { (s_tot / (alpha_bar_prev.sqrt() * sigma_y)).min(1.0) };
    let gamma2 = s_tot * s_tot - alpha_bar_prev * lambda * lambda * sigma_y * sigma_y;
    (lambda, gamma2.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub mode: Mode,
    pub noise_rule: NoiseRule,
    pub seed: u64,
    /// RNG stream, normally the patch index.
    pub stream: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { mode: Mode::Masked, noise_rule: NoiseRule::Absorb, seed: 0, stream: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub k: usize,
    pub t: usize,
    /// Value returned by [`sigma_scale`].
    pub lambda: f64,
    /// Value actually used for the correction.
    pub lambda_applied: f64,
    pub gamma: f64,
    /// `‖A ŷ − ỹ‖∞` after correction.
    pub residual: f64,
    /// Largest `|ŷ|` outside the boundary mask.
    pub outside_max: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationResult {
    pub y0: Array2<f64>,
    pub mask: BoundaryMask,
    pub trace: Vec<StepTrace>,
    pub options: SampleOptions,
    pub elapsed_secs: f64,
}

impl RestorationResult {
    pub fn final_residual(&self) -> f64 {
        self.trace.last().map_or(0.0, |s| s.residual)
    }
}

/// Per-step view handed to an observer.
pub struct StepView<'a> {
    pub trace: &'a StepTrace,
    /// Corrected clean-image estimate ŷ_{0|τ_k}.
    pub y0_hat: &'a Array2<f64>,
    pub y_prev: &'a Array2<f64>,
}

pub fn restore<D: Denoiser + ?Sized>(
    problem: &RestorationProblem,
    denoiser: &mut D,
    sched: &DiffusionSchedule,
    opts: SampleOptions,
) -> Result<RestorationResult, RestoreError> {
    restore_observed(problem, denoiser, sched, opts, |_| {})
}

/// As [`restore`], calling `observer` after every step.
pub fn restore_observed<D, F>(
    problem: &RestorationProblem,
    denoiser: &mut D,
    sched: &DiffusionSchedule,
    opts: SampleOptions,
    mut observer: F,
) -> Result<RestorationResult, RestoreError>
where
    D: Denoiser + ?Sized,
    F: FnMut(&StepView<'_>),
{
    problem.validate()?;
    let started = Instant::now();
    let dim = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(opts.stream);

    let mut y = standard_normal(dim, &mut rng);
    let mut trace = Vec::with_capacity(sched.sampling_steps());
    let omega = &problem.operator.omega;

    for k in (1..=sched.sampling_steps()).rev() {
        let t = sched.tau(k);
        let eps = denoiser
            .predict_eps(&y, t)
            .and_then(|e| checked_eps(e, dim))
            .map_err(|source| RestoreError::Denoiser { k, t, source })?;
        let y0 = predict_y0(&y, &eps, t, sched);
        finite(&y0, k, t, "clean-image estimate")?;

        let co = sched.ddim_coefficients(k);
        let (lambda, gamma) = sigma_scale(co.alpha_bar_prev, problem.sigma_y);
        // Observed pixels follow the plain update once the observation is absorbed.
        let (lambda_applied, observed_rule) = match opts.noise_rule {
            NoiseRule::Ddnm => (lambda, true),
            NoiseRule::Absorb if lambda >= 1.0 => (1.0, true),
            NoiseRule::Absorb => (0.0, false),
        };

        let mut y0_hat = range_null_correct(&y0, problem, lambda_applied)?;
        if opts.mode == Mode::Masked {
            y0_hat = apply_boundary(&y0_hat, &problem.mask);
        }

        let noise = standard_normal(dim, &mut rng);
        let sa = co.alpha_bar_prev.sqrt();
        let y_prev = Zip::from(&y0_hat).and(&eps).and(&noise).and(omega).map_collect(|&x, &e, &z, &o| {
            if o && observed_rule {
                sa * x + gamma * z
            } else {
                sa * x + co.eps_coef * e + co.sigma * z
            }
        });
        finite(&y_prev, k, t, "DDIM update")?;

        let mut residual = 0.0f64;
        let mut outside_max = 0.0f64;
        for ((&x, &obs), (&o, &m)) in y0_hat.iter().zip(&problem.y_tilde).zip(omega.iter().zip(&problem.mask.grid)) {
            if o {
                residual = residual.max((x - obs).abs());
            }
            if !m {
                outside_max = outside_max.max(x.abs());
            }
        }
        debug_assert!(opts.mode == Mode::Vanilla || outside_max == 0.0);

        let step = StepTrace { k, t, lambda, lambda_applied, gamma, residual, outside_max, clamped: co.clamped };
        observer(&StepView { trace: &step, y0_hat: &y0_hat, y_prev: &y_prev });
        trace.push(step);
        y = y_prev;
    }

    Ok(RestorationResult {
        y0: y,
        mask: problem.mask.clone(),
        trace,
        options: opts,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

fn finite(x: &Array2<f64>, k: usize, t: usize, stage: &'static str) -> Result<(), RestoreError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RestoreError::NonFinite { k, t, stage })
    }
}

/// Metric depth image of a restored patch; only pixels inside the boundary
/// mask are valid.
pub fn denormalize(result: &RestorationResult, image: &DepthImage) -> Result<DepthImage, RestoreError> {
    let range = image.range.ok_or(RestoreError::MissingRange)?;
    if result.y0.dim() != image.values.dim() {
        return Err(RestoreError::Shape { what: "restored image", expected: image.values.dim(), got: result.y0.dim() });
    }
    let valid = result.mask.grid.clone();
    let values = Zip::from(&result.y0).and(&valid).map_collect(|&y, &m| if m { range.denormalize(y) } else { 0.0 });
    Ok(DepthImage { values, valid, range: None, frame: image.frame, intrinsics: image.intrinsics })
}
