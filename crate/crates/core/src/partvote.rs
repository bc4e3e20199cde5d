//! Multi-view part-label voting.
//!
//! Each foreground pixel of a per-view label map casts one vote, for its
//! label, on the dominant (largest barycentric weight) vertex of the face it
//! sees. Background pixels cast nothing. The per-vertex mode over the five
//! foreground parts becomes the vertex label; vertices no view ever saw
//! inherit the label of the nearest voted vertex in edge hops.

use std::collections::VecDeque;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{Image, LabelMap};
use crate::mesh::{Mesh, MeshError, PartLabel};
use crate::raster::{self, RasterError, RenderBuffers, WHITE};
use crate::view::Viewpoint;

/// Label given to vertices that no voted vertex can reach.
pub const FALLBACK_LABEL: PartLabel = PartLabel::Others;

#[derive(Debug, Error)]
pub enum VoteError {
    #[error("label map is {labels:?} but render buffers are {buffers:?}")]
    Resolution {
        labels: (usize, usize),
        buffers: (usize, usize),
    },
    #[error("tally covers {tally} vertices, mesh has {mesh}")]
    TallySize { tally: usize, mesh: usize },
    #[error("label provider failed on view {view}: {message}")]
    Provider { view: usize, message: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Per-vertex vote counters, one per label code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteTally {
    counts: Vec<[u32; PartLabel::COUNT]>,
}

impl VoteTally {
    pub fn new(vertex_count: usize) -> Self {
        VoteTally {
            counts: vec![[0; PartLabel::COUNT]; vertex_count],
        }
    }

    pub fn from_counts(counts: Vec<[u32; PartLabel::COUNT]>) -> Self {
        VoteTally { counts }
    }

    pub fn counts(&self) -> &[[u32; PartLabel::COUNT]] {
        &self.counts
    }

    pub fn vertex_count(&self) -> usize {
        self.counts.len()
    }

    pub fn add_vote(&mut self, vertex: u32, label: PartLabel) {
        self.counts[vertex as usize][label.code() as usize] += 1;
    }

    pub fn total(&self, vertex: usize) -> u32 {
        self.counts[vertex].iter().sum()
    }

    /// Element-wise sum; panics on size mismatch.
    pub fn merge(&mut self, other: &VoteTally) {
        assert_eq!(self.counts.len(), other.counts.len(), "tally size mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for k in 0..PartLabel::COUNT {
                a[k] += b[k];
            }
        }
    }
}

/// Adds one vote per foreground pixel of `labels` to the dominant vertex of
/// the face visible at that pixel.
///
/// Pixels that are background in either the label map or the buffers vote
/// for nothing.
pub fn unproject_votes(
    labels: &LabelMap,
    buffers: &RenderBuffers,
    mesh: &Mesh,
    tally: &mut VoteTally,
) -> Result<(), VoteError> {
    if labels.shape() != buffers.shape() {
        return Err(VoteError::Resolution {
            labels: labels.shape(),
            buffers: buffers.shape(),
        });
    }
    if tally.vertex_count() != mesh.vertex_count() {
        return Err(VoteError::TallySize {
            tally: tally.vertex_count(),
            mesh: mesh.vertex_count(),
        });
    }
    for pix in buffers.foreground() {
        let label = labels.get(pix);
        if !label.is_foreground() {
            continue;
        }
        let v = buffers.dominant_vertex(mesh, pix).expect("foreground pixel");
        tally.add_vote(v, label);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartLabelField {
    pub labels: Vec<PartLabel>,
    /// Winning votes over all votes; 0 for vertices that received none.
    pub confidence: Vec<f64>,
}

impl PartLabelField {
    pub fn voted(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(|&i| self.confidence[i] > 0.0)
    }
}

/// Per-vertex mode of the foreground counters; ties go to the lowest code.
/// Returns `None` for a vertex without foreground votes.
pub fn winner(counts: &[u32; PartLabel::COUNT]) -> Option<(PartLabel, u32, u32)> {
    let total: u32 = counts[1..].iter().sum();
    if total == 0 {
        return None;
    }
    let mut best = 1;
    for k in 2..PartLabel::COUNT {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Some((PartLabel::from_code(best as u8).unwrap(), counts[best], total))
}

/// Resolves a tally into per-vertex labels.
///
/// Unvoted vertices get the label of the nearest voted vertex by
/// breadth-first search over mesh edges (sources expand in vertex order, so
/// equidistant conflicts go to the lower-indexed source), or
/// [`FALLBACK_LABEL`] when no voted vertex is reachable.
pub fn aggregate(tally: &VoteTally, mesh: &Mesh) -> Result<PartLabelField, VoteError> {
    if tally.vertex_count() != mesh.vertex_count() {
        return Err(VoteError::TallySize {
            tally: tally.vertex_count(),
            mesh: mesh.vertex_count(),
        });
    }
    let n = tally.vertex_count();
    let mut labels: Vec<Option<PartLabel>> = vec![None; n];
    let mut confidence = vec![0.0; n];
    let mut queue = VecDeque::new();
    for (v, counts) in tally.counts.iter().enumerate() {
        if let Some((label, wins, total)) = winner(counts) {
            labels[v] = Some(label);
            confidence[v] = wins as f64 / total as f64;
            queue.push_back(v as u32);
        }
    }
    if queue.len() < n {
        let adjacency = mesh.vertex_adjacency();
        while let Some(v) = queue.pop_front() {
            let label = labels[v as usize];
            for &u in &adjacency[v as usize] {
                if labels[u as usize].is_none() {
                    labels[u as usize] = label;
                    queue.push_back(u);
                }
            }
        }
    }
    Ok(PartLabelField {
        labels: labels.into_iter().map(|l| l.unwrap_or(FALLBACK_LABEL)).collect(),
        confidence,
    })
}

/// What a label provider sees for one view.
pub struct ViewInput<'a> {
    pub index: usize,
    pub view: &'a Viewpoint,
    pub buffers: &'a RenderBuffers,
    /// Camera-space normal map on a white background.
    pub normal_map: &'a Image,
}

/// Source of 2D part segments for a view.
///
/// View 0 is always the front view; providers that treat the front
/// specially (image segmentation instead of normal-map segmentation) key on
/// `index == 0`.
pub trait LabelProvider {
    fn labels(&mut self, input: &ViewInput<'_>) -> Result<LabelMap, String>;
}

impl<F> LabelProvider for F
where
    F: FnMut(&ViewInput<'_>) -> Result<LabelMap, String>,
{
    fn labels(&mut self, input: &ViewInput<'_>) -> Result<LabelMap, String> {
        self(input)
    }
}

/// Renders labels from an already-labeled mesh with the same topology as the
/// one being segmented.
pub struct MeshLabelProvider<'m> {
    pub mesh: &'m Mesh,
}

impl LabelProvider for MeshLabelProvider<'_> {
    fn labels(&mut self, input: &ViewInput<'_>) -> Result<LabelMap, String> {
        raster::labels_from_buffers(input.buffers, self.mesh).map_err(|e| e.to_string())
    }
}

/// Reads `view_NNN.png` label maps (8-bit codes) from a directory.
pub struct DirLabelProvider {
    pub dir: std::path::PathBuf,
}

impl DirLabelProvider {
    pub fn file_name(index: usize) -> String {
        format!("view_{index:03}.png")
    }
}

impl LabelProvider for DirLabelProvider {
    fn labels(&mut self, input: &ViewInput<'_>) -> Result<LabelMap, String> {
        let path = self.dir.join(Self::file_name(input.index));
        LabelMap::load_png(&path).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteOptions {
    /// Views rasterized concurrently; 1 forces fully serial execution.
    pub parallel_views: usize,
}

impl Default for VoteOptions {
    fn default() -> Self {
        VoteOptions { parallel_views: 1 }
    }
}

/// Full voting pass: render every view, ask the provider for its label map,
/// unproject and accumulate.
///
/// Tallies are integer sums, so the result does not depend on view order or
/// on the degree of parallelism.
pub fn collect_votes(
    mesh: &Mesh,
    views: &[Viewpoint],
    provider: &mut dyn LabelProvider,
    options: VoteOptions,
) -> Result<VoteTally, VoteError> {
    let mesh = if mesh.normals().is_some() {
        std::borrow::Cow::Borrowed(mesh)
    } else {
        std::borrow::Cow::Owned(mesh.compute_vertex_normals().0)
    };
    let mesh = mesh.as_ref();
    let chunk = options.parallel_views.max(1);
    let mut tally = VoteTally::new(mesh.vertex_count());
    for (chunk_idx, group) in views.chunks(chunk).enumerate() {
        let rendered: Vec<Result<(RenderBuffers, Image), RasterError>> = if chunk == 1 {
            group.iter().map(|v| render_view(mesh, v)).collect()
        } else {
            group.par_iter().map(|v| render_view(mesh, v)).collect()
        };
        let mut maps = Vec::with_capacity(group.len());
        for (k, (view, r)) in group.iter().zip(&rendered).enumerate() {
            let index = chunk_idx * chunk + k;
            let (buffers, normal_map) = r.as_ref().map_err(|e| e.clone())?;
            let labels = provider
                .labels(&ViewInput {
                    index,
                    view,
                    buffers,
                    normal_map,
                })
                .map_err(|message| VoteError::Provider { view: index, message })?;
            maps.push(labels);
        }
        let partials: Vec<Result<VoteTally, VoteError>> = rendered
            .par_iter()
            .zip(&maps)
            .map(|(r, labels)| {
                let (buffers, _) = r.as_ref().expect("checked above");
                let mut t = VoteTally::new(mesh.vertex_count());
                unproject_votes(labels, buffers, mesh, &mut t)?;
                Ok(t)
            })
            .collect();
        for p in partials {
            tally.merge(&p?);
        }
    }
    Ok(tally)
}

fn render_view(mesh: &Mesh, view: &Viewpoint) -> Result<(RenderBuffers, Image), RasterError> {
    let buffers = raster::rasterize(mesh, view)?;
    let normal_map = buffers.normal_map(WHITE);
    Ok((buffers, normal_map))
}

/// Votes and attaches the resulting labels to a copy of `mesh`.
pub fn segment_surface(
    mesh: &Mesh,
    views: &[Viewpoint],
    provider: &mut dyn LabelProvider,
    options: VoteOptions,
) -> Result<(Mesh, PartLabelField), VoteError> {
    let tally = collect_votes(mesh, views, provider, options)?;
    let field = aggregate(&tally, mesh)?;
    let labeled = mesh.clone().with_labels(field.labels.clone())?;
    Ok((labeled, field))
}
