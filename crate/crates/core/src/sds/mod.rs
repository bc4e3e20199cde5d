//! Score-distillation texturing: noise schedule, classifier-free guidance,
//! per-pixel loss gradients, Adam, and the optimization loop.
//!
//! Noising is variance preserving, `x_t = α(t)·x + σ(t)·ε` with the cosine
//! schedule `α = cos(πt/2)`, `σ = sin(πt/2)`. The score-distillation pixel
//! gradient at a render `x` is `w(t)·α(t)·(ε̂ − ε)`, the chain-rule factor
//! `∂x_t/∂x = α(t)` applied to the weighted noise residual; it is pushed
//! through the render and the color field by [`optimize`].

mod adam;
mod optimize;

pub use adam::{adam_step, AdamParams, AdamState};
pub use optimize::{
    optimize, sample_views, OptimizeError, StepOutput, StepRecord, TexturingProblem, TexturingResult, ViewSample,
};

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, LabelMap};
use crate::view::Viewpoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("noise level t={0} outside (0, 1)")]
    NoiseLevel(f64),
    #[error("score model failed (t={t}): {message}")]
    Score { t: f64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Variance-preserving cosine schedule with weighting `w(t) = scale · σ(t)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub weight_scale: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { weight_scale: 1.0 }
    }
}

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        (FRAC_PI_2 * t).cos()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (FRAC_PI_2 * t).sin()
    }

    pub fn weight(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        self.weight_scale * s * s
    }
}

fn check_t(t: f64) -> Result<(), SdsError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(SdsError::NoiseLevel(t))
    }
}

fn check_shape(a: &Image, b: &Image, what: &str) -> Result<(), SdsError> {
    if a.shape() != b.shape() {
        return Err(SdsError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `α(t)·x + σ(t)·ε`.
pub fn perturb(schedule: &NoiseSchedule, image: &Image, t: f64, noise: &Image) -> Result<Image, SdsError> {
    check_t(t)?;
    check_shape(image, noise, "perturb")?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let data = image.data().iter().zip(noise.data()).map(|(x, e)| a * x + s * e).collect();
    Ok(Image::from_raw(image.width(), image.height(), data).expect("same shape"))
}

/// `ε_u + scale·(ε_c − ε_u)`.
pub fn cfg_combine(eps_cond: &Image, eps_uncond: &Image, scale: f64) -> Result<Image, SdsError> {
    check_shape(eps_cond, eps_uncond, "cfg_combine")?;
    let data = eps_cond
        .data()
        .iter()
        .zip(eps_uncond.data())
        .map(|(c, u)| u + scale * (c - u))
        .collect();
    Ok(Image::from_raw(eps_cond.width(), eps_cond.height(), data).expect("same shape"))
}

/// Everything a score model may condition on. Analytic models ignore it.
#[derive(Debug, Clone, Copy)]
pub struct Conditions<'a> {
    /// Part segments rendered from the labeled mesh at this view.
    pub label_map: &'a LabelMap,
    pub front_image: Option<&'a Image>,
    pub prompts: &'a [String],
    pub view: Option<&'a Viewpoint>,
}

/// Noise predictor `ε̂(x_t, t; conditions)`.
pub trait ScoreModel {
    /// Returns predicted noise with the same shape as `noisy`. `conditional`
    /// selects the conditioned branch for classifier-free guidance.
    fn predict_noise(
        &mut self,
        noisy: &Image,
        t: f64,
        conditions: &Conditions<'_>,
        conditional: bool,
    ) -> Result<Image, String>;

    /// Identical inputs always give identical outputs.
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Exact optimal denoiser for a data distribution concentrated at one image
/// `y`: `ε̂ = (x_t − α(t)·y) / σ(t)`.
#[derive(Debug, Clone)]
pub struct DeltaScore {
    target: Image,
    schedule: NoiseSchedule,
}

impl DeltaScore {
    pub fn new(target: Image, schedule: NoiseSchedule) -> Self {
        DeltaScore { target, schedule }
    }

    pub fn target(&self) -> &Image {
        &self.target
    }

    pub fn predict(&self, noisy: &Image, t: f64) -> Result<Image, SdsError> {
        check_t(t)?;
        check_shape(noisy, &self.target, "delta score")?;
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let data = noisy
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(x, y)| (x - a * y) / s)
            .collect();
        Ok(Image::from_raw(noisy.width(), noisy.height(), data).expect("same shape"))
    }
}

impl ScoreModel for DeltaScore {
    fn predict_noise(&mut self, noisy: &Image, t: f64, _: &Conditions<'_>, _: bool) -> Result<Image, String> {
        self.predict(noisy, t).map_err(|e| e.to_string())
    }
}

/// Guided noise prediction. Scale 1 queries only the conditional branch and
/// scale 0 only the unconditional one.
pub fn guided_noise(
    score: &mut dyn ScoreModel,
    noisy: &Image,
    t: f64,
    conditions: &Conditions<'_>,
    cfg_scale: f64,
) -> Result<Image, SdsError> {
    let call = |score: &mut dyn ScoreModel, conditional| {
        let out = score
            .predict_noise(noisy, t, conditions, conditional)
            .map_err(|message| SdsError::Score { t, message })?;
        check_shape(&out, noisy, "score output")?;
        Ok::<_, SdsError>(out)
    };
    if cfg_scale == 1.0 {
        call(score, true)
    } else if cfg_scale == 0.0 {
        call(score, false)
    } else {
        let cond = call(score, true)?;
        let uncond = call(score, false)?;
        cfg_combine(&cond, &uncond, cfg_scale)
    }
}

/// Per-pixel score-distillation gradient `w(t)·α(t)·(ε̂ − ε)` at `render`.
pub fn sds_pixel_grad(
    render: &Image,
    score: &mut dyn ScoreModel,
    conditions: &Conditions<'_>,
    t: f64,
    noise: &Image,
    schedule: &NoiseSchedule,
    cfg_scale: f64,
) -> Result<Image, SdsError> {
    let noisy = perturb(schedule, render, t, noise)?;
    let eps_hat = guided_noise(score, &noisy, t, conditions, cfg_scale)?;
    let k = schedule.weight(t) * schedule.alpha(t);
    let data = eps_hat.data().iter().zip(noise.data()).map(|(p, e)| k * (p - e)).collect();
    Ok(Image::from_raw(render.width(), render.height(), data).expect("same shape"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    /// Sum over masked pixels and channels of squared error, divided by the
    /// masked pixel count.
    pub loss: f64,
    pub grad: Image,
    /// True when the mask selected nothing; loss and gradient are zero.
    pub empty_mask: bool,
}

/// Masked mean squared error and its gradient `2(render − target)/|mask|`.
pub fn recon_grad(render: &Image, target: &Image, mask: &[bool]) -> Result<ReconOutput, SdsError> {
    check_shape(render, target, "recon")?;
    if mask.len() != render.pixel_count() {
        return Err(SdsError::Shape(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            render.pixel_count()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = Image::new(render.width(), render.height());
    if count == 0 {
        return Ok(ReconOutput {
            loss: 0.0,
            grad,
            empty_mask: true,
        });
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (pix, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (r, t) = (render.pixel(pix), target.pixel(pix));
        let mut g = [0.0; 3];
        for k in 0..3 {
            let d = r[k] - t[k];
            loss += d * d * inv;
            g[k] = 2.0 * d * inv;
        }
        grad.set_pixel(pix, g);
    }
    Ok(ReconOutput {
        loss,
        grad,
        empty_mask: false,
    })
}

/// Optimization settings. Defaults are the published ones where they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdsConfig {
    pub steps: u64,
    /// Views per step; the front view is always one of them.
    pub batch: usize,
    pub cfg_scale: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub lr: f64,
    /// Multiplicative learning-rate decay per step.
    pub lr_decay: f64,
    pub seed: u64,
    pub recon_weight: f64,
    pub sds_weight: f64,
    pub adam: AdamParams,
    pub schedule: NoiseSchedule,
}

impl Default for SdsConfig {
    fn default() -> Self {
        SdsConfig {
            steps: 4000,
            batch: 4,
            cfg_scale: 100.0,
            t_min: 0.02,
            t_max: 0.98,
            lr: 1e-2,
            lr_decay: 0.1f64.powf(1.0 / 4000.0),
            seed: 0,
            recon_weight: 1.0,
            sds_weight: 1.0,
            adam: AdamParams::default(),
            schedule: NoiseSchedule::default(),
        }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<(), SdsError> {
        let bad = |m: String| Err(SdsError::Config(m));
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            return bad(format!("need 0 < t_min < t_max < 1, got [{}, {}]", self.t_min, self.t_max));
        }
        if !(self.cfg_scale >= 0.0) {
            return bad(format!("cfg_scale must be >= 0, got {}", self.cfg_scale));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr must be positive and lr_decay in (0, 1]".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.lr_decay.powf(step as f64)
    }
}
