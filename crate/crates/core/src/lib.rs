//! Part-guided texturing of triangle meshes.
//!
//! The pipeline has two stages. [`partvote`] renders a textureless mesh
//! from many viewpoints, obtains a 2D part segmentation per view, and votes
//! the pixel labels back onto vertices. [`sds`] then optimizes a hash-grid
//! [`field::ColorField`] so renders match a front photo and satisfy a
//! score model. Neural models live behind the [`oracle`] protocol; the
//! numerical core runs with analytic stand-ins such as
//! [`sds::DeltaScore`].
//!
//! Scene units are centimeters throughout.

pub mod field;
pub mod fixtures;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod oracle;
pub mod partvote;
pub mod raster;
pub mod sds;
pub mod view;

pub use field::{ColorField, FieldConfig, PointNormalizer, Precision};
pub use image::{Image, LabelMap};
pub use mesh::{load_mesh, save_mesh, MeshFormat, PlyEncoding};
pub use mesh::{Mesh, MeshError, PartLabel, Vec3};
pub use metrics::MetricReport;
pub use partvote::{LabelProvider, PartLabelField, VoteTally};
pub use raster::RenderBuffers;
pub use sds::{DeltaScore, NoiseSchedule, ScoreModel, SdsConfig};
pub use view::{OrthoFrame, Viewpoint};
