use std::path::PathBuf;

use clap::Args;
use parttex::partvote::{segment_surface, DirLabelProvider, LabelProvider, VoteError, VoteOptions};
use parttex::view::sample_viewpoints;
use parttex::OrthoFrame;
use serde_json::json;

use super::{load_image, load_mesh, open_oracle, save_mesh, write_json};
use crate::{CliError, CliResult, ExitKind, GlobalArgs, Logger, ViewArgs};

#[derive(Debug, Args, Clone)]
#[group(id = "source", required = true, multiple = false, args = ["labels_dir", "oracle"])]
pub struct SegmentArgs {
    /// Textureless input mesh (OBJ or PLY) [published: none]
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory of per-view label maps view_000.png, view_001.png, ... [published: none]
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
    /// Oracle endpoint: tcp://host:port, stdio:<command>, or replay:<transcript> [published: none]
    #[arg(long)]
    pub oracle: Option<String>,
    /// Input photo; the oracle segments it for view 0 instead of the normal map [published: front view uses image segmentation]
    #[arg(long)]
    pub front_image: Option<PathBuf>,
    /// Per-request oracle timeout in seconds [published: none]
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
    /// Append every oracle exchange to this transcript file [published: none]
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub view: ViewArgs,
    /// Output PLY with a part_label vertex property (default: <mesh>_part.ply) [published: none]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional JSON summary of vote counts and confidences [published: none]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn default_out(mesh: &std::path::Path) -> PathBuf {
    let stem = mesh.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mesh".into());
    mesh.with_file_name(format!("{stem}_part.ply"))
}

pub fn run(args: &SegmentArgs, global: &GlobalArgs, logger: &Logger) -> CliResult<()> {
    let mesh = load_mesh(&args.mesh)?;
    let frame = OrthoFrame::fit(&mesh);
    let views = sample_viewpoints(args.view.views, args.view.seed, frame, args.view.resolution)
        .map_err(|e| CliError::input(e.to_string()))?;
    let (mut provider, provider_kind): (Box<dyn LabelProvider>, ExitKind) = match (&args.labels_dir, &args.oracle) {
        (Some(dir), _) => {
            if !dir.is_dir() {
                return Err(CliError::input(format!("label directory {} does not exist", dir.display())));
            }
            (Box::new(DirLabelProvider { dir: dir.clone() }), ExitKind::Input)
        }
        (None, Some(endpoint)) => {
            let front = args.front_image.as_ref().map(|p| load_image(p, "front image")).transpose()?;
            let client = open_oracle(endpoint, args.timeout, args.record.as_ref())?.with_front_image(front);
            (Box::new(client), ExitKind::Oracle)
        }
        (None, None) => unreachable!("clap enforces one source"),
    };
    let options = VoteOptions {
        parallel_views: if global.deterministic { 1 } else { rayon::current_num_threads() },
    };
    let (labeled, field) = segment_surface(&mesh, &views, provider.as_mut(), options).map_err(|e| match e {
        VoteError::Provider { .. } => CliError::new(provider_kind, e.to_string()),
        other => CliError::input(other.to_string()),
    })?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.mesh));
    save_mesh(&labeled, &out)?;
    let voted = field.voted().count();
    let mut histogram = serde_json::Map::new();
    for part in parttex::PartLabel::ALL {
        let n = field.labels.iter().filter(|&&l| l == part).count();
        histogram.insert(part.name().into(), json!(n));
    }
    let summary = json!({
        "views": views.len(),
        "vertices": mesh.vertex_count(),
        "voted_vertices": voted,
        "filled_vertices": mesh.vertex_count() - voted,
        "labels": histogram,
        "mean_confidence": if voted > 0 {
            field.voted().map(|i| field.confidence[i]).sum::<f64>() / voted as f64
        } else { 0.0 },
        "out": out,
    });
    if let Some(path) = &args.report {
        write_json(path, &summary)?;
    }
    logger.info("segment-vote", summary);
    Ok(())
}
