//! Reverse-diffusion sampler conditioned on a CG prior, with annealed
//! k-space residual guidance and pluggable denoisers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{KSpaceMeasurements, MultiCoilImage};
use crate::nufft::{self, apply_frequency_weighting, cg_inverse, CgOptions, NufftPlan};

/// Linear noise schedule from `sigma_max` down to `sigma_min` over `steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_max: 10.0,
            sigma_min: 0.01,
            steps: 50,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need sigma_max > sigma_min > 0, got {} and {}",
                self.sigma_max, self.sigma_min
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, step: usize) -> Result<f64> {
        schedule_sigma(self, step)
    }

    /// Noise level the sampler moves to after `step`; zero after the last one.
    pub fn sigma_next(&self, step: usize) -> Result<f64> {
        if step + 1 == self.steps {
            Ok(0.0)
        } else {
            schedule_sigma(self, step + 1)
        }
    }
}

pub fn schedule_sigma(schedule: &NoiseSchedule, step: usize) -> Result<f64> {
    if step >= schedule.steps {
        return Err(Error::OutOfRange {
            step,
            steps: schedule.steps,
        });
    }
    if schedule.steps == 1 {
        return Ok(schedule.sigma_max);
    }
    if step == schedule.steps - 1 {
        return Ok(schedule.sigma_min);
    }
    let frac = step as f64 / (schedule.steps - 1) as f64;
    Ok(schedule.sigma_max + frac * (schedule.sigma_min - schedule.sigma_max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub inject_noise: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            c1: 1.0,
            c2: 4.0,
            cg_iters: 10,
            cg_tol: 1e-4,
            inject_noise: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParameter(format!("c1 must be > 0, got {}", self.c1)));
        }
        if !(self.c2 >= 0.0 && self.c2.is_finite()) {
            return Err(Error::InvalidParameter(format!("c2 must be >= 0, got {}", self.c2)));
        }
        if self.cg_iters == 0 || !(self.cg_tol > 0.0) {
            return Err(Error::InvalidParameter("cg_iters must be >= 1 and cg_tol > 0".into()));
        }
        Ok(())
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            max_iters: self.cg_iters,
            tol: self.cg_tol,
            l2_reg: 0.0,
        }
    }
}

/// Guidance weight at sampling progress `s_norm` (0 at the first step, 1 at the last).
pub fn gamma(config: &GuidanceConfig, s_norm: f64) -> f64 {
    config.beta * (1.0 - s_norm.clamp(0.0, 1.0))
}

/// `1 / (c1 exp(-c2 r^2))` with `r` the radius of each sample in cycles/sample.
pub fn radial_weights(coords: &[[f64; 2]], c1: f64, c2: f64) -> Vec<f64> {
    coords
        .iter()
        .map(|[kx, ky]| (c2 * (kx * kx + ky * ky)).exp() / c1)
        .collect()
}

pub trait Denoiser: Sync {
    /// Estimate of the clean image given `x_t` at noise level `sigma` and the prior image.
    fn denoise(&self, x_t: &MultiCoilImage, sigma: f64, prior: &MultiCoilImage) -> Result<MultiCoilImage>;
}

/// Posterior mean under a Gaussian prior `N(prior, tau^2 I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrior {
    pub tau: f64,
}

impl Denoiser for GaussianPrior {
    fn denoise(&self, x_t: &MultiCoilImage, sigma: f64, prior: &MultiCoilImage) -> Result<MultiCoilImage> {
        gaussian_prior_denoise(x_t, sigma, prior, self.tau)
    }
}

/// Soft-thresholds the residual from the prior at `threshold_scale * sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shrinkage {
    pub threshold_scale: f64,
}

impl Denoiser for Shrinkage {
    fn denoise(&self, x_t: &MultiCoilImage, sigma: f64, prior: &MultiCoilImage) -> Result<MultiCoilImage> {
        shrinkage_denoise(x_t, sigma, prior, self.threshold_scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Gaussian,
    Shrinkage,
}

/// Serializable denoiser choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub kind: DenoiserKind,
    pub tau: f64,
    pub threshold_scale: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Gaussian,
            tau: 1.0,
            threshold_scale: 1.0,
        }
    }
}

impl DenoiserConfig {
    pub fn build(&self) -> Result<Box<dyn Denoiser>> {
        match self.kind {
            DenoiserKind::Gaussian if self.tau > 0.0 => Ok(Box::new(GaussianPrior { tau: self.tau })),
            DenoiserKind::Gaussian => Err(Error::InvalidParameter(format!("tau must be > 0, got {}", self.tau))),
            DenoiserKind::Shrinkage if self.threshold_scale >= 0.0 => Ok(Box::new(Shrinkage {
                threshold_scale: self.threshold_scale,
            })),
            DenoiserKind::Shrinkage => Err(Error::InvalidParameter(format!(
                "threshold_scale must be >= 0, got {}",
                self.threshold_scale
            ))),
        }
    }
}

pub fn gaussian_prior_denoise(
    x_t: &MultiCoilImage,
    sigma: f64,
    prior: &MultiCoilImage,
    tau: f64,
) -> Result<MultiCoilImage> {
    x_t.check_shape(prior)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    if tau.is_infinite() || sigma == 0.0 {
        return Ok(x_t.clone());
    }
    let (t2, s2) = (tau * tau, sigma * sigma);
    let den = t2 + s2;
    let data = x_t
        .data
        .iter()
        .zip(&prior.data)
        .map(|(x, p)| (x * t2 + p * s2) / den)
        .collect();
    MultiCoilImage::from_data(x_t.coils, x_t.height, x_t.width, data)
}

/// Score of `N(prior, (tau^2 + sigma^2) I)` per real component, packed as complex.
pub fn gaussian_score(x: &MultiCoilImage, sigma: f64, prior: &MultiCoilImage, tau: f64) -> Result<MultiCoilImage> {
    x.check_shape(prior)?;
    let var = tau * tau + sigma * sigma;
    let data = x.data.iter().zip(&prior.data).map(|(x, p)| -(x - p) / var).collect();
    MultiCoilImage::from_data(x.coils, x.height, x.width, data)
}

pub fn shrinkage_denoise(
    x_t: &MultiCoilImage,
    sigma: f64,
    prior: &MultiCoilImage,
    threshold_scale: f64,
) -> Result<MultiCoilImage> {
    x_t.check_shape(prior)?;
    if !(threshold_scale >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold_scale must be >= 0, got {threshold_scale}"
        )));
    }
    let thr = threshold_scale * sigma;
    let data = x_t
        .data
        .iter()
        .zip(&prior.data)
        .map(|(x, p)| {
            let d = x - p;
            let mag = d.norm();
            if mag <= thr {
                *p
            } else {
                p + d * ((mag - thr) / mag)
            }
        })
        .collect();
    MultiCoilImage::from_data(x_t.coils, x_t.height, x_t.width, data)
}

/// Euler step of the probability-flow ODE from `sigma_cur` to `sigma_next`.
pub fn euler_step(
    x: &MultiCoilImage,
    denoised: &MultiCoilImage,
    sigma_cur: f64,
    sigma_next: f64,
) -> Result<MultiCoilImage> {
    x.check_shape(denoised)?;
    let h = (sigma_next - sigma_cur) / sigma_cur;
    let data = x.data.iter().zip(&denoised.data).map(|(x, d)| x + (x - d) * h).collect();
    MultiCoilImage::from_data(x.coils, x.height, x.width, data)
}

/// One annealed data-consistency correction: `x + gamma * (A~^-1 W (y0 - A x) + noise)`.
pub fn guidance_step<R: Rng + ?Sized>(
    plan: &NufftPlan,
    x_tilde: &MultiCoilImage,
    y0: &KSpaceMeasurements,
    sigma: f64,
    gamma: f64,
    config: &GuidanceConfig,
    rng: &mut R,
) -> Result<MultiCoilImage> {
    let weights = radial_weights(&plan.sample_coords, config.c1, config.c2);
    guide(plan, x_tilde, y0, &weights, sigma, gamma, config, rng).map(|(x, _)| x)
}

#[allow(clippy::too_many_arguments)]
fn guide<R: Rng + ?Sized>(
    plan: &NufftPlan,
    x_tilde: &MultiCoilImage,
    y0: &KSpaceMeasurements,
    weights: &[f64],
    sigma: f64,
    gamma: f64,
    config: &GuidanceConfig,
    rng: &mut R,
) -> Result<(MultiCoilImage, f64)> {
    let predicted = nufft::forward(plan, x_tilde)?;
    if predicted.coils != y0.coils || predicted.samples_per_coil != y0.samples_per_coil {
        return Err(Error::shape(
            format!("{}x{}", predicted.coils, predicted.samples_per_coil),
            format!("{}x{}", y0.coils, y0.samples_per_coil),
        ));
    }
    let residual: Vec<Complex64> = y0.data.iter().zip(&predicted.data).map(|(a, b)| a - b).collect();
    let y_norm = y0.norm();
    let res_norm = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rel = if y_norm > 0.0 { res_norm / y_norm } else { res_norm };
    if gamma == 0.0 {
        return Ok((x_tilde.clone(), rel));
    }
    let residual = KSpaceMeasurements::from_data(y0.coils, y0.samples_per_coil, residual)?;
    let weighted = apply_frequency_weighting(&residual, weights)?;
    let (mut grad, _) = cg_inverse(plan, &weighted, config.cg_options())?;
    if config.inject_noise && sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for z in &mut grad.data {
            *z += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    let data = x_tilde.data.iter().zip(&grad.data).map(|(x, g)| x + g * gamma).collect();
    let out = MultiCoilImage::from_data(x_tilde.coils, x_tilde.height, x_tilde.width, data)?;
    Ok((out, rel))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sigma: f64,
    pub sigma_next: f64,
    pub gamma: f64,
    /// `||y0 - A x~|| / ||y0||` before the correction.
    pub residual_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub image: MultiCoilImage,
    pub prior: MultiCoilImage,
    pub log: Vec<StepRecord>,
}

pub fn sample_reconstruct(
    plan: &NufftPlan,
    y0: &KSpaceMeasurements,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    seed: u64,
) -> Result<SampleOutput> {
    schedule.validate()?;
    config.validate()?;
    let (prior, _) = cg_inverse(plan, y0, config.cg_options())?;
    sample_with_prior(plan, y0, prior, denoiser, schedule, config, seed)
}

/// Same as [`sample_reconstruct`] with a precomputed prior image.
pub fn sample_with_prior(
    plan: &NufftPlan,
    y0: &KSpaceMeasurements,
    prior: MultiCoilImage,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
    seed: u64,
) -> Result<SampleOutput> {
    schedule.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, schedule.sigma_max).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data = (0..prior.data.len())
        .map(|_| Complex64::new(init.sample(&mut rng), init.sample(&mut rng)))
        .collect();
    let mut x = MultiCoilImage::from_data(prior.coils, prior.height, prior.width, data)?;
    let weights = radial_weights(&plan.sample_coords, config.c1, config.c2);
    let mut log = Vec::with_capacity(schedule.steps);

    for step in 0..schedule.steps {
        let sigma = schedule.sigma(step)?;
        let sigma_next = schedule.sigma_next(step)?;
        let denoised = denoiser.denoise(&x, sigma, &prior)?;
        let x_tilde = euler_step(&x, &denoised, sigma, sigma_next)?;
        let s_norm = if schedule.steps == 1 {
            1.0
        } else {
            step as f64 / (schedule.steps - 1) as f64
        };
        let g = gamma(config, s_norm);
        let (next, residual_norm) = guide(plan, &x_tilde, y0, &weights, sigma_next, g, config, &mut rng)?;
        if !next.is_finite() {
            return Err(Error::NumericalBreakdown {
                iteration: step,
                detail: "sampler state became non-finite".into(),
            });
        }
        x = next;
        log.push(StepRecord {
            step,
            sigma,
            sigma_next,
            gamma: g,
            residual_norm,
        });
    }
    Ok(SampleOutput { image: x, prior, log })
}
