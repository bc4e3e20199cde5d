//! Z-buffered orthographic software rasterizer.
//!
//! A pixel is covered by a triangle when its center lies inside the projected
//! triangle (edges inclusive). Among covering triangles the nearest wins; on
//! exact depth ties the lower face index wins. Barycentric weights are exact
//! object-space weights because the projection is affine, so the surface
//! point behind a pixel is `Σ wᵢ vᵢ`.

use thiserror::Error;

use crate::image::{Image, LabelMap};
use crate::mesh::{Mesh, PartLabel, Vec3};
use crate::view::Viewpoint;

/// `face_id` value on background pixels.
pub const NO_FACE: u32 = u32::MAX;
pub const MIN_RESOLUTION: u32 = 16;
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RasterError {
    #[error("mesh has no vertex normals")]
    MissingNormals,
    #[error("mesh has no vertex labels")]
    MissingLabels,
    #[error("{got} vertex colors for {expected} vertices")]
    ColorCount { got: usize, expected: usize },
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    Resolution(u32),
    #[error("buffer shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    face_id: Vec<u32>,
    barycentric: Vec<[f64; 3]>,
    normal: Vec<Vec3>,
}

impl RenderBuffers {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderBuffers {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            face_id: vec![NO_FACE; n],
            barycentric: vec![[0.0; 3]; n],
            normal: vec![Vec3::zeros(); n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn face_ids(&self) -> &[u32] {
        &self.face_id
    }

    pub fn barycentrics(&self) -> &[[f64; 3]] {
        &self.barycentric
    }

    /// Camera-space unit normals; zero on background.
    pub fn normals(&self) -> &[Vec3] {
        &self.normal
    }

    pub fn is_foreground(&self, pixel: usize) -> bool {
        self.face_id[pixel] != NO_FACE
    }

    pub fn mask(&self) -> Vec<bool> {
        self.face_id.iter().map(|&f| f != NO_FACE).collect()
    }

    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.face_id.len()).filter(move |&i| self.face_id[i] != NO_FACE)
    }

    /// Object-space surface point behind a foreground pixel.
    pub fn surface_point(&self, mesh: &Mesh, pixel: usize) -> Option<Vec3> {
        let f = self.face_id[pixel];
        if f == NO_FACE {
            return None;
        }
        let v = mesh.face_vertices(f as usize);
        let w = self.barycentric[pixel];
        Some(v[0] * w[0] + v[1] * w[1] + v[2] * w[2])
    }

    /// Vertex of the visible face carrying the largest barycentric weight;
    /// ties go to the earliest corner.
    pub fn dominant_vertex(&self, mesh: &Mesh, pixel: usize) -> Option<u32> {
        let f = self.face_id[pixel];
        if f == NO_FACE {
            return None;
        }
        let w = self.barycentric[pixel];
        let mut best = 0;
        for k in 1..3 {
            if w[k] > w[best] {
                best = k;
            }
        }
        Some(mesh.faces()[f as usize][best])
    }

    /// Normal map encoded as `(n + 1) / 2`, background filled with `background`.
    pub fn normal_map(&self, background: [f64; 3]) -> Image {
        let mut img = Image::filled(self.width, self.height, background);
        for i in self.foreground() {
            let n = self.normal[i];
            img.set_pixel(i, [(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5]);
        }
        img
    }
}

/// Inverse of the normal-map encoding, renormalized.
pub fn decode_normal(rgb: [f64; 3]) -> Vec3 {
    let n = Vec3::new(2.0 * rgb[0] - 1.0, 2.0 * rgb[1] - 1.0, 2.0 * rgb[2] - 1.0);
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        n
    }
}

fn check_resolution(view: &Viewpoint) -> Result<usize, RasterError> {
    let res = view.resolution();
    if res < MIN_RESOLUTION {
        return Err(RasterError::Resolution(res));
    }
    Ok(res as usize)
}

/// Rasterizes a mesh with vertex normals; normals are interpolated
/// barycentrically, renormalized and stored in camera space.
pub fn rasterize(mesh: &Mesh, view: &Viewpoint) -> Result<RenderBuffers, RasterError> {
    let normals = mesh.normals().ok_or(RasterError::MissingNormals)?;
    raster_core(mesh, view, Some(normals))
}

/// Like [`rasterize`] but does not need vertex normals; the normal buffer
/// holds flat face normals instead.
pub fn rasterize_geometry(mesh: &Mesh, view: &Viewpoint) -> Result<RenderBuffers, RasterError> {
    raster_core(mesh, view, mesh.normals())
}

fn raster_core(mesh: &Mesh, view: &Viewpoint, normals: Option<&[Vec3]>) -> Result<RenderBuffers, RasterError> {
    let res = check_resolution(view)?;
    let mut buf = RenderBuffers::empty(res, res);
    let projected: Vec<(f64, f64, f64)> = mesh.vertices().iter().map(|v| view.project(v)).collect();

    for (fi, face) in mesh.faces().iter().enumerate() {
        let [a, b, c] = face.map(|i| projected[i as usize]);
        let area = edge(a, b, c.0, c.1);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        let Some((c0, c1)) = pixel_span(min_x, max_x, res) else { continue };
        let Some((r0, r1)) = pixel_span(min_y, max_y, res) else { continue };
        for row in r0..=r1 {
            let py = row as f64 + 0.5;
            for col in c0..=c1 {
                let px = col as f64 + 0.5;
                let w0 = edge(b, c, px, py) / area;
                let w1 = edge(c, a, px, py) / area;
                let w2 = edge(a, b, px, py) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let sum = w0 + w1 + w2;
                let w = [w0 / sum, w1 / sum, w2 / sum];
                let z = w[0] * a.2 + w[1] * b.2 + w[2] * c.2;
                let pix = row * res + col;
                if z < buf.depth[pix] {
                    buf.depth[pix] = z;
                    buf.face_id[pix] = fi as u32;
                    buf.barycentric[pix] = w;
                }
            }
        }
    }

    let rot_t = view.rotation().transpose();
    let face_normal = |f: usize| {
        let [p, q, r] = mesh.face_vertices(f);
        (q - p).cross(&(r - p)).normalize()
    };
    for pix in 0..buf.face_id.len() {
        let f = buf.face_id[pix];
        if f == NO_FACE {
            continue;
        }
        let world = match normals {
            Some(ns) => {
                let w = buf.barycentric[pix];
                let idx = mesh.faces()[f as usize];
                let n = ns[idx[0] as usize] * w[0] + ns[idx[1] as usize] * w[1] + ns[idx[2] as usize] * w[2];
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    face_normal(f as usize)
                }
            }
            None => face_normal(f as usize),
        };
        buf.normal[pix] = rot_t * world;
    }
    Ok(buf)
}

/// Twice the signed area of `(a, b, p)`.
#[inline]
fn edge(a: (f64, f64, f64), b: (f64, f64, f64), px: f64, py: f64) -> f64 {
    (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
}

/// Pixels whose centers can fall in `[lo, hi]`, clipped to the image.
fn pixel_span(lo: f64, hi: f64, res: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(res as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

/// Label of the dominant vertex at every foreground pixel; background is 0.
pub fn labels_from_buffers(buffers: &RenderBuffers, mesh: &Mesh) -> Result<LabelMap, RasterError> {
    let labels = mesh.labels().ok_or(RasterError::MissingLabels)?;
    let mut map = LabelMap::new(buffers.width, buffers.height);
    for pix in buffers.foreground() {
        let v = buffers.dominant_vertex(mesh, pix).expect("foreground pixel");
        map.set(pix, labels[v as usize]);
    }
    Ok(map)
}

pub fn render_labels(mesh: &Mesh, view: &Viewpoint) -> Result<LabelMap, RasterError> {
    if mesh.labels().is_none() {
        return Err(RasterError::MissingLabels);
    }
    labels_from_buffers(&rasterize_geometry(mesh, view)?, mesh)
}

/// Barycentric blend of per-vertex colors composited over `background`.
///
/// The result is linear in the vertex colors: the derivative of a
/// foreground pixel with respect to the color of vertex `v` is `v`'s
/// barycentric weight at that pixel. The returned buffers carry those
/// `(face_id, barycentric)` sensitivities; see [`backprop_vertex_colors`].
pub fn render_colors(
    mesh: &Mesh,
    colors: &[Vec3],
    view: &Viewpoint,
    background: [f64; 3],
) -> Result<(Image, RenderBuffers), RasterError> {
    let buffers = rasterize_geometry(mesh, view)?;
    let img = shade_vertex_colors(&buffers, mesh, colors, background)?;
    Ok((img, buffers))
}

pub fn shade_vertex_colors(
    buffers: &RenderBuffers,
    mesh: &Mesh,
    colors: &[Vec3],
    background: [f64; 3],
) -> Result<Image, RasterError> {
    if colors.len() != mesh.vertex_count() {
        return Err(RasterError::ColorCount {
            got: colors.len(),
            expected: mesh.vertex_count(),
        });
    }
    let mut img = Image::filled(buffers.width, buffers.height, background);
    for pix in buffers.foreground() {
        let f = mesh.faces()[buffers.face_id[pix] as usize];
        let w = buffers.barycentric[pix];
        let c = colors[f[0] as usize] * w[0] + colors[f[1] as usize] * w[1] + colors[f[2] as usize] * w[2];
        img.set_pixel(pix, [c.x, c.y, c.z]);
    }
    Ok(img)
}

/// Transpose of [`shade_vertex_colors`]: per-vertex color gradients from
/// per-pixel gradients. Background pixels contribute nothing.
pub fn backprop_vertex_colors(
    buffers: &RenderBuffers,
    mesh: &Mesh,
    pixel_grad: &Image,
) -> Result<Vec<Vec3>, RasterError> {
    if pixel_grad.shape() != buffers.shape() {
        return Err(RasterError::Shape(format!(
            "gradient {:?} vs buffers {:?}",
            pixel_grad.shape(),
            buffers.shape()
        )));
    }
    let mut grad = vec![Vec3::zeros(); mesh.vertex_count()];
    for pix in buffers.foreground() {
        let f = mesh.faces()[buffers.face_id[pix] as usize];
        let w = buffers.barycentric[pix];
        let g = Vec3::from(pixel_grad.pixel(pix));
        for k in 0..3 {
            grad[f[k] as usize] += g * w[k];
        }
    }
    Ok(grad)
}

/// Convenience: uniform label for every vertex.
pub fn uniform_labels(mesh: &Mesh, label: PartLabel) -> Vec<PartLabel> {
    vec![label; mesh.vertex_count()]
}
