use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{adam_step, recon_grad, sds_pixel_grad, AdamState, Conditions, ScoreModel, SdsConfig, SdsError};
use crate::field::{ColorField, FieldConfig, FieldError, PointNormalizer};
use crate::image::{Image, LabelMap};
use crate::mesh::{Mesh, MeshError, Vec3};
use crate::raster::{self, RasterError, RenderBuffers, WHITE};
use crate::view::{OrthoFrame, ViewError, Viewpoint};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("mesh has no vertex labels; texturing renders part segments from them")]
    Unlabeled,
    #[error("front image is {got:?}, renders are {expected:?}")]
    FrontShape { got: (usize, usize), expected: (usize, usize) },
    #[error("step {step}, view {view}: {source}")]
    Sds { step: u64, view: usize, source: SdsError },
    #[error("step {step}, view {view}: non-finite {what}")]
    NonFinite { step: u64, view: usize, what: &'static str },
    #[error(transparent)]
    Config(SdsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// One view of a step with its frozen noise draw.
#[derive(Debug, Clone)]
pub struct ViewSample {
    pub view: Viewpoint,
    pub t: f64,
    pub noise: Image,
    /// The reconstruction term applies to this view.
    pub is_front: bool,
}

/// A labeled mesh with its render setup and optional front-view target.
pub struct TexturingProblem<'a> {
    mesh: &'a Mesh,
    frame: OrthoFrame,
    resolution: u32,
    front: Viewpoint,
    front_buffers: RenderBuffers,
    front_labels: LabelMap,
    front_image: Option<Image>,
    front_mask: Option<Vec<bool>>,
    prompts: Vec<String>,
    background: [f64; 3],
}

struct RenderedView {
    buffers: RenderBuffers,
    pixels: Vec<usize>,
    points: Vec<Vec3>,
    image: Image,
}

/// Per-view gradient contributions of one step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub grad: Vec<f64>,
    pub recon_loss: Option<f64>,
    /// Root mean square of the SDS pixel gradient over all views.
    pub sds_grad_rms: f64,
}

/// Progress log record, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub recon_loss: Option<f64>,
    pub sds_grad_rms: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TexturingResult {
    pub field: ColorField,
    /// Input mesh with vertex colors from the final field.
    pub mesh: Mesh,
    pub steps: u64,
}

impl<'a> TexturingProblem<'a> {
    pub fn new(mesh: &'a Mesh, frame: OrthoFrame, resolution: u32) -> Result<Self, OptimizeError> {
        if mesh.labels().is_none() {
            return Err(OptimizeError::Unlabeled);
        }
        let front = Viewpoint::front(frame, resolution)?;
        let front_buffers = raster::rasterize_geometry(mesh, &front)?;
        let front_labels = raster::labels_from_buffers(&front_buffers, mesh)?;
        Ok(TexturingProblem {
            mesh,
            frame,
            resolution,
            front,
            front_buffers,
            front_labels,
            front_image: None,
            front_mask: None,
            prompts: Vec::new(),
            background: WHITE,
        })
    }

    /// Front-view reconstruction target. Without an explicit mask the
    /// rendered foreground of the front view is used.
    pub fn with_front_image(mut self, image: Image, mask: Option<Vec<bool>>) -> Result<Self, OptimizeError> {
        let expected = self.front_buffers.shape();
        if image.shape() != expected {
            return Err(OptimizeError::FrontShape {
                got: image.shape(),
                expected,
            });
        }
        if let Some(m) = &mask {
            if m.len() != image.pixel_count() {
                return Err(OptimizeError::FrontShape {
                    got: (m.len(), 1),
                    expected,
                });
            }
        }
        self.front_image = Some(image);
        self.front_mask = mask;
        Ok(self)
    }

    pub fn with_prompts(mut self, prompts: Vec<String>) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn frame(&self) -> OrthoFrame {
        self.frame
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn front_view(&self) -> &Viewpoint {
        &self.front
    }

    /// Field with its point normalizer fitted to this mesh.
    pub fn init_field(&self, config: FieldConfig, seed: u64) -> Result<ColorField, FieldError> {
        Ok(ColorField::new(config, seed)?.with_normalizer(PointNormalizer::fit(self.mesh)))
    }

    fn render(&self, field: &ColorField, view: &Viewpoint, is_front: bool) -> Result<RenderedView, OptimizeError> {
        let buffers = if is_front {
            self.front_buffers.clone()
        } else {
            raster::rasterize_geometry(self.mesh, view)?
        };
        let pixels: Vec<usize> = buffers.foreground().collect();
        let points: Vec<Vec3> = pixels
            .iter()
            .map(|&p| field.normalizer().apply(&buffers.surface_point(self.mesh, p).expect("foreground")))
            .collect();
        let (colors, _) = field.eval(&points);
        let mut image = Image::filled(buffers.width(), buffers.height(), self.background);
        for (&p, c) in pixels.iter().zip(&colors) {
            image.set_pixel(p, *c);
        }
        Ok(RenderedView {
            buffers,
            pixels,
            points,
            image,
        })
    }

    /// Field render of `view` composited over the background.
    pub fn render_field(&self, field: &ColorField, view: &Viewpoint) -> Result<(Image, RenderBuffers), OptimizeError> {
        let is_front = view == &self.front;
        let r = self.render(field, view, is_front)?;
        Ok((r.image, r.buffers))
    }

    /// Gradient of the step loss with respect to the field parameters for
    /// the given frozen samples. `step` only labels errors.
    pub fn step_gradient(
        &self,
        field: &ColorField,
        samples: &[ViewSample],
        score: &mut dyn ScoreModel,
        config: &SdsConfig,
        step: u64,
    ) -> Result<StepOutput, OptimizeError> {
        let mut grad = vec![0.0; field.parameter_count()];
        let mut recon_loss = None;
        let mut sds_sq = 0.0;
        let mut sds_n = 0usize;
        let sds_scale = config.sds_weight / samples.len().max(1) as f64;
        for (vi, sample) in samples.iter().enumerate() {
            let wrap = |source| OptimizeError::Sds { step, view: vi, source };
            let rv = self.render(field, &sample.view, sample.is_front)?;
            let mut pixel_grad = Image::new(rv.buffers.width(), rv.buffers.height());
            if sample.is_front && config.recon_weight != 0.0 {
                if let Some(target) = &self.front_image {
                    let mask = match &self.front_mask {
                        Some(m) => m.clone(),
                        None => rv.buffers.mask(),
                    };
                    let r = recon_grad(&rv.image, target, &mask).map_err(wrap)?;
                    if !r.loss.is_finite() {
                        return Err(OptimizeError::NonFinite {
                            step,
                            view: vi,
                            what: "reconstruction loss",
                        });
                    }
                    recon_loss = Some(config.recon_weight * r.loss);
                    for (g, r) in pixel_grad.data_mut().iter_mut().zip(r.grad.data()) {
                        *g += config.recon_weight * r;
                    }
                }
            }
            if config.sds_weight != 0.0 {
                let labels;
                let label_map = if sample.is_front {
                    &self.front_labels
                } else {
                    labels = raster::labels_from_buffers(&rv.buffers, self.mesh)?;
                    &labels
                };
                let conditions = Conditions {
                    label_map,
                    front_image: self.front_image.as_ref(),
                    prompts: &self.prompts,
                    view: Some(&sample.view),
                };
                let g = sds_pixel_grad(
                    &rv.image,
                    score,
                    &conditions,
                    sample.t,
                    &sample.noise,
                    &config.schedule,
                    config.cfg_scale,
                )
                .map_err(wrap)?;
                for (acc, v) in pixel_grad.data_mut().iter_mut().zip(g.data()) {
                    sds_sq += v * v;
                    *acc += sds_scale * v;
                }
                sds_n += g.data().len();
            }
            let upstream: Vec<[f64; 3]> = rv.pixels.iter().map(|&p| pixel_grad.pixel(p)).collect();
            if upstream.iter().flatten().any(|v| !v.is_finite()) {
                return Err(OptimizeError::NonFinite {
                    step,
                    view: vi,
                    what: "pixel gradient",
                });
            }
            field.eval_with_grad(&rv.points, &upstream, &mut grad)?;
        }
        Ok(StepOutput {
            grad,
            recon_loss,
            sds_grad_rms: if sds_n > 0 { (sds_sq / sds_n as f64).sqrt() } else { 0.0 },
        })
    }
}

/// The front view plus `batch − 1` views uniform on the sphere, each with a
/// uniform `t` in the configured range and a standard normal noise image.
pub fn sample_views(
    rng: &mut ChaCha8Rng,
    frame: OrthoFrame,
    resolution: u32,
    config: &SdsConfig,
) -> Result<Vec<ViewSample>, ViewError> {
    let n = (resolution as usize).pow(2) * 3;
    let mut out = Vec::with_capacity(config.batch);
    for i in 0..config.batch {
        let view = if i == 0 {
            Viewpoint::front(frame, resolution)?
        } else {
            let az = TAU * rng.random::<f64>();
            let el = (2.0 * rng.random::<f64>() - 1.0).asin();
            Viewpoint::new(az, el, frame, resolution)?
        };
        let t = rng.random_range(config.t_min..=config.t_max);
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        out.push(ViewSample {
            view,
            t,
            noise: Image::from_raw(resolution as usize, resolution as usize, noise).expect("sized"),
            is_front: i == 0,
        });
    }
    Ok(out)
}

/// Runs `config.steps` Adam steps on `field` and returns it with the
/// textured mesh. `observer` receives one record per step.
///
/// Everything runs in a fixed order from one seeded generator, so a given
/// seed reproduces the trajectory bit for bit.
pub fn optimize(
    problem: &TexturingProblem<'_>,
    mut field: ColorField,
    score: &mut dyn ScoreModel,
    config: &SdsConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TexturingResult, OptimizeError> {
    config.validate().map_err(OptimizeError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(field.parameter_count());
    for step in 0..config.steps {
        let samples = sample_views(&mut rng, problem.frame, problem.resolution, config)?;
        let out = problem.step_gradient(&field, &samples, score, config, step)?;
        if out.grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimizeError::NonFinite {
                step,
                view: 0,
                what: "parameter gradient",
            });
        }
        let lr = config.lr_at(step);
        adam_step(field.params_mut(), &out.grad, &mut adam, lr, &config.adam).map_err(|source| {
            OptimizeError::Sds {
                step,
                view: 0,
                source,
            }
        })?;
        observer(&StepRecord {
            step,
            lr,
            recon_loss: out.recon_loss,
            sds_grad_rms: out.sds_grad_rms,
            grad_norm: out.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
    }
    let colors = field.vertex_colors(problem.mesh);
    let mesh = problem.mesh.clone().with_colors(colors)?;
    Ok(TexturingResult {
        field,
        mesh,
        steps: config.steps,
    })
}
