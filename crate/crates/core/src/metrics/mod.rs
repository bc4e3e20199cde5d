//! Geometry, segmentation and image metrics. Distances are in scene units
//! (centimeters).

mod bvh;

pub use bvh::{closest_point_on_triangle, Bvh, Primitive, Triangle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, LabelMap};
use crate::mesh::{Mesh, PartLabel, Vec3};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Default surface sample count for mesh-to-mesh distances.
pub const DEFAULT_SURFACE_SAMPLES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} has no vertex labels")]
    Unlabeled(&'static str),
}

/// Below this many queries everything runs on one thread.
const PARALLEL_THRESHOLD: usize = 2048;

/// Per-query nearest distances, in query order.
fn nearest_distances<P: Primitive + Sync>(bvh: &Bvh<P>, queries: &[Vec3]) -> Vec<f64> {
    let one = |q: &Vec3| bvh.nearest(q).expect("non-empty").0.sqrt();
    if queries.len() >= PARALLEL_THRESHOLD {
        queries.par_iter().map(one).collect()
    } else {
        queries.iter().map(one).collect()
    }
}

/// Mean in a fixed left-to-right order, independent of thread count.
fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean distance from each point to the nearest point of the surface.
pub fn p2s(points: &[Vec3], surface: &Mesh) -> Result<f64, MetricError> {
    if points.is_empty() {
        return Err(MetricError::Empty("p2s points"));
    }
    if surface.face_count() == 0 {
        return Err(MetricError::Empty("p2s surface"));
    }
    let tris = (0..surface.face_count()).map(|f| Triangle(surface.face_vertices(f))).collect();
    Ok(mean(&nearest_distances(&Bvh::build(tris), points)))
}

/// Symmetric Chamfer distance with the ½ factor:
/// `½·(mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty("chamfer point set"));
    }
    let ab = mean(&nearest_distances(&Bvh::build(b.to_vec()), a));
    let ba = mean(&nearest_distances(&Bvh::build(a.to_vec()), b));
    Ok(0.5 * (ab + ba))
}

/// Area-uniform samples on the surface, deterministic for a seed.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<Vec<Vec3>, MetricError> {
    let areas: Vec<f64> = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::Empty("surface with positive area"));
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= r).min(areas.len() - 1);
        let [a, b, c] = mesh.face_vertices(f);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        out.push(a + (b - a) * u + (c - a) * v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDistance {
    pub part: PartLabel,
    pub cd_cm: f64,
    pub pred_vertices: usize,
    pub gt_vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPart {
    pub part: PartLabel,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartCdReport {
    /// Mean over parts present in both meshes; `None` when there are none.
    pub mean_cm: Option<f64>,
    pub parts: Vec<PartDistance>,
    pub excluded: Vec<ExcludedPart>,
}

fn part_vertices(mesh: &Mesh, labels: &[PartLabel], part: PartLabel) -> Vec<Vec3> {
    mesh.vertices()
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == part)
        .map(|(v, _)| *v)
        .collect()
}

/// Chamfer distance between per-part vertex sets, averaged over foreground
/// parts present in both meshes. Parts present on one side only are listed
/// as excluded.
pub fn part_cd(pred: &Mesh, gt: &Mesh) -> Result<PartCdReport, MetricError> {
    let pl = pred.labels().ok_or(MetricError::Unlabeled("prediction"))?;
    let gl = gt.labels().ok_or(MetricError::Unlabeled("ground truth"))?;
    let mut parts = Vec::new();
    let mut excluded = Vec::new();
    for part in PartLabel::FOREGROUND {
        let a = part_vertices(pred, pl, part);
        let b = part_vertices(gt, gl, part);
        match (a.is_empty(), b.is_empty()) {
            (false, false) => parts.push(PartDistance {
                part,
                cd_cm: chamfer(&a, &b)?,
                pred_vertices: a.len(),
                gt_vertices: b.len(),
            }),
            (false, true) => excluded.push(ExcludedPart {
                part,
                reason: "absent from ground truth".into(),
            }),
            (true, false) => excluded.push(ExcludedPart {
                part,
                reason: "absent from prediction".into(),
            }),
            (true, true) => {}
        }
    }
    let mean_cm = if parts.is_empty() {
        None
    } else {
        Some(parts.iter().map(|p| p.cd_cm).sum::<f64>() / parts.len() as f64)
    };
    Ok(PartCdReport {
        mean_cm,
        parts,
        excluded,
    })
}

/// Mean IoU over foreground parts present in either map, or `None` when
/// neither map has any foreground.
pub fn view_part_iou(pred: &LabelMap, gt: &LabelMap) -> Result<Option<f64>, MetricError> {
    if pred.shape() != gt.shape() {
        return Err(MetricError::Shape(format!("{:?} vs {:?}", pred.shape(), gt.shape())));
    }
    let mut inter = [0usize; PartLabel::COUNT];
    let mut union = [0usize; PartLabel::COUNT];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p.code() as usize, g.code() as usize);
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let ious: Vec<f64> = PartLabel::FOREGROUND
        .iter()
        .map(|l| l.code() as usize)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    Ok((!ious.is_empty()).then(|| mean(&ious)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIouReport {
    /// Mean over views that have any foreground; `None` if none do.
    pub mean: Option<f64>,
    pub per_view: Vec<Option<f64>>,
}

/// Per-view part IoU averaged over views. Views where neither map has any
/// foreground are skipped.
pub fn part_iou(pred: &[LabelMap], gt: &[LabelMap]) -> Result<PartIouReport, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Shape(format!("{} vs {} views", pred.len(), gt.len())));
    }
    let per_view = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| view_part_iou(p, g))
        .collect::<Result<Vec<_>, _>>()?;
    let present: Vec<f64> = per_view.iter().flatten().copied().collect();
    Ok(PartIouReport {
        mean: (!present.is_empty()).then(|| mean(&present)),
        per_view,
    })
}

/// Fraction of positions where the labels agree.
pub fn label_acc(pred: &[PartLabel], gt: &[PartLabel]) -> Result<f64, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::Shape(format!("{} vs {} labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty("label lists"));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `10·log10(peak²/MSE)` over every pixel and channel of two composited
/// images, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.data().is_empty() {
        return Err(MetricError::Empty("images"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Serializable summary of a comparison. Absent fields were not computable
/// from the given inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub p2s_cm: Option<f64>,
    pub cd_cm: Option<f64>,
    pub part_cd_cm: Option<f64>,
    pub part_cd: Option<PartCdReport>,
    pub part_iou: Option<f64>,
    pub part_iou_per_view: Vec<Option<f64>>,
    pub label_acc: Option<f64>,
    pub psnr_db: Vec<f64>,
    pub psnr_mean_db: Option<f64>,
    /// Always `None`: no perceptual network is bundled.
    pub lpips: Option<f64>,
    pub unavailable: Vec<String>,
    pub surface_samples: usize,
    pub compared_vertices: usize,
    pub compared_pixels: usize,
}

/// Mesh-to-mesh geometry and label metrics. P2S and CD use `samples`
/// area-uniform points per mesh with the given seed.
pub fn compare_meshes(pred: &Mesh, gt: &Mesh, samples: usize, seed: u64) -> Result<MetricReport, MetricError> {
    let sp = sample_surface(pred, samples, seed)?;
    let sg = sample_surface(gt, samples, seed)?;
    let mut report = MetricReport {
        p2s_cm: Some(p2s(&sp, gt)?),
        cd_cm: Some(chamfer(&sp, &sg)?),
        surface_samples: samples,
        unavailable: vec!["lpips: requires a pretrained perceptual network".into()],
        ..MetricReport::default()
    };
    if pred.labels().is_some() && gt.labels().is_some() {
        let pc = part_cd(pred, gt)?;
        report.part_cd_cm = pc.mean_cm;
        report.part_cd = Some(pc);
        if pred.vertex_count() == gt.vertex_count() {
            report.label_acc = Some(label_acc(pred.labels().unwrap(), gt.labels().unwrap())?);
            report.compared_vertices = pred.vertex_count();
        } else {
            report
                .unavailable
                .push("label_acc: meshes have different vertex counts".into());
        }
    } else {
        report.unavailable.push("part_cd, label_acc: both meshes need part labels".into());
    }
    Ok(report)
}

impl MetricReport {
    /// Adds per-view PSNR for composited image pairs.
    pub fn add_psnr(&mut self, pairs: &[(Image, Image)]) -> Result<(), MetricError> {
        for (a, b) in pairs {
            self.psnr_db.push(psnr(a, b, 1.0)?);
            self.compared_pixels += a.pixel_count();
        }
        if !self.psnr_db.is_empty() {
            self.psnr_mean_db = Some(mean(&self.psnr_db));
        }
        Ok(())
    }

    pub fn add_part_iou(&mut self, pred: &[LabelMap], gt: &[LabelMap]) -> Result<(), MetricError> {
        let r = part_iou(pred, gt)?;
        self.part_iou = r.mean;
        self.part_iou_per_view = r.per_view;
        Ok(())
    }
}
