//! Indexed triangle meshes with optional per-vertex normals, colors and part
//! labels.
//!
//! A [`Mesh`] is validated on construction and immutable afterwards; every
//! operation that changes attributes returns a new mesh. Positions are in
//! scene units, fixed at centimeters. Loaders never rescale.

mod io;

pub use io::{load_mesh, load_obj, load_ply, save_mesh, save_obj, save_ply, MeshFormat, PlyEncoding};

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Tolerance on unit length of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Where in a file a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{format} parse error at {location}: {message}")]
    Parse {
        format: &'static str,
        location: Location,
        message: String,
    },
    #[error("invalid mesh: {0}")]
    Validation(String),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type MeshResult<T> = Result<T, MeshError>;

/// Semantic human part carried by a vertex or a pixel.
///
/// Code 0 is background and only appears in rendered label maps; the other
/// five codes are the foreground parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum PartLabel {
    Background = 0,
    FaceHair = 1,
    UpperClothes = 2,
    LowerClothes = 3,
    Footwear = 4,
    Others = 5,
}

impl PartLabel {
    /// Number of codes including background.
    pub const COUNT: usize = 6;
    pub const ALL: [PartLabel; 6] = [
        PartLabel::Background,
        PartLabel::FaceHair,
        PartLabel::UpperClothes,
        PartLabel::LowerClothes,
        PartLabel::Footwear,
        PartLabel::Others,
    ];
    pub const FOREGROUND: [PartLabel; 5] = [
        PartLabel::FaceHair,
        PartLabel::UpperClothes,
        PartLabel::LowerClothes,
        PartLabel::Footwear,
        PartLabel::Others,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_foreground(self) -> bool {
        self != PartLabel::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Background => "background",
            PartLabel::FaceHair => "face-hair",
            PartLabel::UpperClothes => "upper-clothes",
            PartLabel::LowerClothes => "lower-clothes",
            PartLabel::Footwear => "footwear",
            PartLabel::Others => "others",
        }
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PartLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<u8>() {
            return PartLabel::from_code(code).ok_or_else(|| format!("label code {code} out of range"));
        }
        PartLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown part label '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
    colors: Option<Vec<Vec3>>,
    labels: Option<Vec<PartLabel>>,
}

impl Default for Mesh {
    fn default() -> Self {
        Mesh::empty()
    }
}

impl Mesh {
    pub fn empty() -> Self {
        Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: None,
            colors: None,
            labels: None,
        }
    }

    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> MeshResult<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::Validation(format!("vertex {i} has a non-finite coordinate")));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i as usize >= n) {
                return Err(MeshError::Validation(format!(
                    "face {fi} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::Validation(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        Ok(Mesh {
            vertices,
            faces,
            normals: None,
            colors: None,
            labels: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> MeshResult<Self> {
        self.check_len("normals", normals.len())?;
        if let Some(i) = normals
            .iter()
            .position(|n| !((n.norm() - 1.0).abs() <= NORMAL_TOLERANCE))
        {
            return Err(MeshError::Validation(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> MeshResult<Self> {
        self.check_len("colors", colors.len())?;
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|x| (0.0..=1.0).contains(x)))
        {
            return Err(MeshError::Validation(format!("color {i} is outside [0,1]")));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<PartLabel>) -> MeshResult<Self> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_colors(mut self) -> Self {
        self.colors = None;
        self
    }

    fn check_len(&self, what: &str, len: usize) -> MeshResult<()> {
        if len != self.vertices.len() {
            return Err(MeshError::Validation(format!(
                "{what} has {len} entries for {} vertices",
                self.vertices.len()
            )));
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[PartLabel]> {
        self.labels.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Axis-aligned bounds, `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Undirected vertex adjacency, each list sorted and deduplicated.
    pub fn vertex_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Area-weighted vertex normals.
    ///
    /// Each face contributes its unnormalized cross product (twice its area
    /// times its unit normal) to its three corners. Vertices whose incident
    /// faces all have zero area get `(0,0,1)` and are listed in the report.
    pub fn compute_vertex_normals(&self) -> (Mesh, NormalReport) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let n = (b - a).cross(&(c - a));
            for &i in f {
                acc[i as usize] += n;
            }
        }
        let mut report = NormalReport::default();
        let normals = acc
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    n / len
                } else {
                    report.defaulted.push(i);
                    Vec3::z()
                }
            })
            .collect();
        let mut out = self.clone();
        out.normals = Some(normals);
        (out, report)
    }

    /// Submesh of the faces whose majority label (at least two of three
    /// vertices) is `part`.
    ///
    /// Faces with three distinct vertex labels belong to no part. Surviving
    /// vertices keep their original relative order. Returns an empty mesh
    /// when the part is absent.
    pub fn extract_part(&self, part: PartLabel) -> MeshResult<Mesh> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| MeshError::Validation("extract_part needs vertex labels".into()))?;
        let keep: Vec<[u32; 3]> = self
            .faces
            .iter()
            .copied()
            .filter(|f| face_label(f.map(|i| labels[i as usize])) == Some(part))
            .collect();
        Ok(self.submesh(&keep))
    }

    fn submesh(&self, faces: &[[u32; 3]]) -> Mesh {
        let mut used = vec![false; self.vertices.len()];
        for f in faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = kept.len() as u32;
                kept.push(i);
            }
        }
        let pick = |src: &Option<Vec<Vec3>>| src.as_ref().map(|s| kept.iter().map(|&i| s[i]).collect());
        Mesh {
            vertices: kept.iter().map(|&i| self.vertices[i]).collect(),
            faces: faces.iter().map(|f| f.map(|i| remap[i as usize])).collect(),
            normals: pick(&self.normals),
            colors: pick(&self.colors),
            labels: self
                .labels
                .as_ref()
                .map(|l| kept.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Majority label of a face, `None` when all three labels differ.
pub fn face_label(labels: [PartLabel; 3]) -> Option<PartLabel> {
    let [a, b, c] = labels;
    if a == b || a == c {
        Some(a)
    } else if b == c {
        Some(b)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalReport {
    /// Vertices with no non-degenerate incident face.
    pub defaulted: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn part_label_codes_round_trip() {
        for l in PartLabel::ALL {
            assert_eq!(PartLabel::from_code(l.code()), Some(l));
            assert_eq!(l.name().parse::<PartLabel>().unwrap(), l);
        }
        assert_eq!(PartLabel::from_code(6), None);
        assert_eq!(PartLabel::FOREGROUND.len(), 5);
    }

    #[test]
    fn rejects_out_of_range_and_degenerate_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(MeshError::Validation(_))
        ));
        assert!(matches!(Mesh::new(v, vec![[0, 1, 1]]), Err(MeshError::Validation(_))));
    }

    #[test]
    fn rejects_bad_attributes() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!(m.clone().with_normals(vec![Vec3::new(0.0, 0.0, 2.0); 3]).is_err());
        assert!(m.clone().with_colors(vec![Vec3::new(1.5, 0.0, 0.0); 3]).is_err());
        assert!(m.with_labels(vec![PartLabel::Others; 2]).is_err());
    }

    #[test]
    fn cube_corner_normals_are_diagonals() {
        let (m, report) = fixtures::unit_cube().compute_vertex_normals();
        assert!(report.defaulted.is_empty());
        let center = Vec3::repeat(0.5);
        for (v, n) in m.vertices().iter().zip(m.normals().unwrap()) {
            let expected = (v - center).map(f64::signum).normalize();
            assert!((n - expected).norm() < 1e-12, "{v:?}: {n:?}");
        }
    }

    #[test]
    fn planar_ccw_triangle_normals_point_up() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let (m, _) = m.compute_vertex_normals();
        for n in m.normals().unwrap() {
            assert_eq!(*n, Vec3::z());
        }
    }

    #[test]
    fn icosphere_normals_match_sphere() {
        let (m, _) = fixtures::icosphere(3).compute_vertex_normals();
        let max_angle = m
            .vertices()
            .iter()
            .zip(m.normals().unwrap())
            .map(|(v, n)| n.dot(&v.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
            .fold(0.0f64, f64::max);
        assert!(max_angle < 5.0, "max angle {max_angle}");
    }

    #[test]
    fn isolated_vertex_gets_default_normal() {
        let m = Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (m, report) = m.compute_vertex_normals();
        assert_eq!(report.defaulted, vec![3]);
        assert_eq!(m.normals().unwrap()[3], Vec3::z());
    }

    #[test]
    fn extract_identity_and_absent() {
        let cube = fixtures::unit_cube();
        let labeled = cube
            .clone()
            .with_labels(vec![PartLabel::UpperClothes; 8])
            .unwrap();
        let all = labeled.extract_part(PartLabel::UpperClothes).unwrap();
        assert_eq!(all.vertices(), cube.vertices());
        assert_eq!(all.faces(), cube.faces());
        let none = labeled.extract_part(PartLabel::Footwear).unwrap();
        assert_eq!(none.vertex_count(), 0);
        assert_eq!(none.face_count(), 0);
    }

    #[test]
    fn extract_top_bottom_split_matches_face_by_face_count() {
        let cube = fixtures::unit_cube();
        let labels: Vec<_> = cube
            .vertices()
            .iter()
            .map(|v| if v.z > 0.5 { PartLabel::FaceHair } else { PartLabel::Footwear })
            .collect();
        let labeled = cube.clone().with_labels(labels.clone()).unwrap();
        let top = labeled.extract_part(PartLabel::FaceHair).unwrap();

        let mut expected: Vec<[[u64; 3]; 3]> = Vec::new();
        for f in cube.faces() {
            let hits = f.iter().filter(|&&i| labels[i as usize] == PartLabel::FaceHair).count();
            if hits >= 2 {
                expected.push(f.map(|i| cube.vertices()[i as usize].map(f64::to_bits).into()));
            }
        }
        let got: Vec<[[u64; 3]; 3]> = top
            .faces()
            .iter()
            .map(|f| f.map(|i| top.vertices()[i as usize].map(f64::to_bits).into()))
            .collect();
        assert_eq!(got, expected);
        assert!(top.labels().unwrap().len() == top.vertex_count());
    }

    #[test]
    fn three_way_faces_are_dropped_everywhere() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]])
            .unwrap()
            .with_labels(vec![PartLabel::FaceHair, PartLabel::UpperClothes, PartLabel::Footwear])
            .unwrap();
        for p in PartLabel::FOREGROUND {
            assert!(m.extract_part(p).unwrap().is_empty());
        }
    }

    #[test]
    fn extract_carries_colors() {
        let cube = fixtures::unit_cube();
        let colors: Vec<_> = cube.vertices().iter().map(|v| v * 0.5).collect();
        let labels: Vec<_> = cube
            .vertices()
            .iter()
            .map(|v| if v.x > 0.5 { PartLabel::Others } else { PartLabel::FaceHair })
            .collect();
        let m = cube.with_colors(colors).unwrap().with_labels(labels).unwrap();
        let part = m.extract_part(PartLabel::Others).unwrap();
        for (v, c) in part.vertices().iter().zip(part.colors().unwrap()) {
            assert_eq!(*c, v * 0.5);
        }
    }
}
