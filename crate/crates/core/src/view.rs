//! Orthographic viewpoints on the sphere around a mesh.
//!
//! World convention: `+y` is up and the front of the subject faces `+z`. A
//! view at azimuth `a` and elevation `e` sits along
//! `d = (cos e · sin a, sin e, cos e · cos a)` and looks back along `-d`
//! toward the frame center. Camera space is right-handed with `+x` right,
//! `+y` up and the camera looking down `-z`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, Vec3};

/// Default render resolution in pixels (square).
pub const DEFAULT_RESOLUTION: u32 = 512;
/// Number of segmentation views.
pub const DEFAULT_VIEW_COUNT: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum ViewError {
    #[error("view count must be at least 1")]
    ZeroViews,
    #[error("half-extent must be positive and finite, got {0}")]
    BadExtent(f64),
    #[error("resolution must be at least 1")]
    BadResolution,
}

/// Square orthographic window: world-space center and half side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoFrame {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl OrthoFrame {
    pub fn new(center: Vec3, half_extent: f64) -> Result<Self, ViewError> {
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(ViewError::BadExtent(half_extent));
        }
        Ok(OrthoFrame {
            center: center.into(),
            half_extent,
        })
    }

    /// Bounding-box center and 0.6 × the largest bounding-box dimension.
    /// A mesh without extent gets half-extent 1.
    pub fn fit(mesh: &Mesh) -> Self {
        let (center, largest) = match mesh.bounds() {
            Some((lo, hi)) => ((lo + hi) * 0.5, (hi - lo).max()),
            None => (Vec3::zeros(), 0.0),
        };
        let half = if largest > 0.0 { 0.6 * largest } else { 1.0 };
        OrthoFrame {
            center: center.into(),
            half_extent: half,
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }
}

impl Default for OrthoFrame {
    fn default() -> Self {
        OrthoFrame {
            center: [0.0; 3],
            half_extent: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ViewpointRecord", try_from = "ViewpointRecord")]
pub struct Viewpoint {
    azimuth: f64,
    elevation: f64,
    rotation: Matrix3<f64>,
    frame: OrthoFrame,
    resolution: u32,
}

#[derive(Serialize, Deserialize)]
struct ViewpointRecord {
    azimuth: f64,
    elevation: f64,
    resolution: u32,
    frame: OrthoFrame,
}

impl From<Viewpoint> for ViewpointRecord {
    fn from(v: Viewpoint) -> Self {
        ViewpointRecord {
            azimuth: v.azimuth,
            elevation: v.elevation,
            resolution: v.resolution,
            frame: v.frame,
        }
    }
}

impl TryFrom<ViewpointRecord> for Viewpoint {
    type Error = ViewError;

    fn try_from(r: ViewpointRecord) -> Result<Self, ViewError> {
        OrthoFrame::new(r.frame.center(), r.frame.half_extent)?;
        Viewpoint::new(r.azimuth, r.elevation, r.frame, r.resolution)
    }
}

/// Unit direction from the frame center toward the camera.
pub fn direction(azimuth: f64, elevation: f64) -> Vec3 {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vec3::new(ce * sa, se, ce * ca)
}

impl Viewpoint {
    /// Azimuth is wrapped into `[0, 2π)` and elevation clamped to `[-π/2, π/2]`.
    pub fn new(azimuth: f64, elevation: f64, frame: OrthoFrame, resolution: u32) -> Result<Self, ViewError> {
        if resolution == 0 {
            return Err(ViewError::BadResolution);
        }
        let mut azimuth = azimuth.rem_euclid(TAU);
        if azimuth >= TAU {
            azimuth = 0.0;
        }
        let elevation = elevation.clamp(-PI / 2.0, PI / 2.0);
        let back = direction(azimuth, elevation);
        // Derived from azimuth alone so the basis stays defined at the poles.
        let right = Vec3::new(azimuth.cos(), 0.0, -azimuth.sin());
        let up = back.cross(&right);
        let rotation = Matrix3::from_columns(&[right, up, back]);
        Ok(Viewpoint {
            azimuth,
            elevation,
            rotation,
            frame,
            resolution,
        })
    }

    pub fn front(frame: OrthoFrame, resolution: u32) -> Result<Self, ViewError> {
        Viewpoint::new(0.0, 0.0, frame, resolution)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Camera-to-world rotation; columns are the camera right, up and back axes.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn frame(&self) -> &OrthoFrame {
        &self.frame
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Unit vector from the frame center toward the camera.
    pub fn direction(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn with_frame(mut self, frame: OrthoFrame) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_resolution(mut self, resolution: u32) -> Self {
        self.resolution = resolution.max(1);
        self
    }

    /// World point to continuous pixel coordinates `(col, row)` plus depth.
    ///
    /// Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; row 0 is the top. Depth is
    /// the distance in front of the frame center's plane along the viewing
    /// direction, so larger depth is farther from the camera.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.rotation.transpose() * (p - self.frame.center());
        let res = self.resolution as f64;
        let h = self.frame.half_extent;
        let col = (c.x / h + 1.0) * 0.5 * res;
        let row = (1.0 - c.y / h) * 0.5 * res;
        (col, row, -c.z)
    }

    /// Inverse of [`project`](Self::project).
    pub fn unproject(&self, col: f64, row: f64, depth: f64) -> Vec3 {
        let res = self.resolution as f64;
        let h = self.frame.half_extent;
        let cam = Vec3::new((2.0 * col / res - 1.0) * h, (1.0 - 2.0 * row / res) * h, -depth);
        self.rotation * cam + self.frame.center()
    }
}

/// `n` viewpoints on a Fibonacci lattice, rigidly rotated so that index 0 is
/// the exact front view.
///
/// `seed = 0` is the canonical lattice. Any other seed spins the lattice about
/// its polar axis by a seed-derived phase before anchoring, which preserves
/// every pairwise angle.
pub fn sample_viewpoints(
    n: usize,
    seed: u64,
    frame: OrthoFrame,
    resolution: u32,
) -> Result<Vec<Viewpoint>, ViewError> {
    if n == 0 {
        return Err(ViewError::ZeroViews);
    }
    let dirs = fibonacci_directions(n, seed);
    dirs.iter()
        .map(|d| {
            let elevation = d.y.clamp(-1.0, 1.0).asin();
            let azimuth = d.x.atan2(d.z);
            Viewpoint::new(azimuth, elevation, frame, resolution)
        })
        .collect()
}

/// Lattice directions behind [`sample_viewpoints`]; element 0 is exactly `+z`.
pub fn fibonacci_directions(n: usize, seed: u64) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let phase = if seed == 0 {
        0.0
    } else {
        ChaCha8Rng::seed_from_u64(seed).random::<f64>() * TAU
    };
    let raw: Vec<Vec3> = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64 + phase;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect();
    let anchor = Rotation3::rotation_between(&raw[0], &Vec3::z()).unwrap_or_else(|| {
        // raw[0] antiparallel to +z: turn half way around the y axis.
        Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::y()), PI)
    });
    let mut dirs: Vec<Vec3> = raw.iter().map(|d| (anchor * d).normalize()).collect();
    dirs[0] = Vec3::z();
    dirs
}

/// Turntable views at azimuth 0°, 90°, 180° and 270°, elevation 0.
pub fn cardinal_viewpoints(frame: OrthoFrame, resolution: u32) -> Result<[Viewpoint; 4], ViewError> {
    Ok([
        Viewpoint::new(0.0, 0.0, frame, resolution)?,
        Viewpoint::new(PI / 2.0, 0.0, frame, resolution)?,
        Viewpoint::new(PI, 0.0, frame, resolution)?,
        Viewpoint::new(3.0 * PI / 2.0, 0.0, frame, resolution)?,
    ])
}
