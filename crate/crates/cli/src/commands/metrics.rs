use std::path::{Path, PathBuf};

use clap::Args;
use parttex::metrics::{compare_meshes, DEFAULT_SURFACE_SAMPLES};
use parttex::partvote::DirLabelProvider;
use parttex::raster::{self, WHITE};
use parttex::view::{cardinal_viewpoints, sample_viewpoints};
use parttex::{Image, LabelMap, Mesh, OrthoFrame, Viewpoint};
use rayon::prelude::*;
use serde_json::json;

use super::{load_image, load_mesh, write_json};
use crate::{CliError, CliResult, Logger, ViewArgs};

#[derive(Debug, Args, Clone)]
pub struct MetricsArgs {
    /// Predicted mesh [published: none]
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mesh [published: none]
    #[arg(long)]
    pub gt: PathBuf,
    /// Surface samples per mesh for P2S and CD [published: none]
    #[arg(long, default_value_t = DEFAULT_SURFACE_SAMPLES)]
    pub samples: usize,
    /// Seed for surface sampling [published: none]
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    #[command(flatten)]
    pub view: ViewArgs,
    /// Compare color renders from the four turntable views (needs colored meshes) [published: none]
    #[arg(long)]
    pub color_views: bool,
    /// Directory of predicted images view_NNN.png for PSNR [published: none]
    #[arg(long, requires = "gt_images")]
    pub pred_images: Option<PathBuf>,
    /// Directory of reference images view_NNN.png for PSNR [published: none]
    #[arg(long, requires = "pred_images")]
    pub gt_images: Option<PathBuf>,
    /// Write the JSON report here instead of stdout [published: none]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn render_label_maps(mesh: &Mesh, views: &[Viewpoint]) -> CliResult<Vec<LabelMap>> {
    views
        .par_iter()
        .map(|v| raster::render_labels(mesh, v).map_err(|e| CliError::input(e.to_string())))
        .collect()
}

fn render_color_views(mesh: &Mesh, views: &[Viewpoint]) -> CliResult<Vec<Image>> {
    let colors = mesh.colors().expect("checked").to_vec();
    views
        .par_iter()
        .map(|v| {
            raster::render_colors(mesh, &colors, v, WHITE)
                .map(|(img, _)| img)
                .map_err(|e| CliError::input(e.to_string()))
        })
        .collect()
}

fn image_pairs(pred: &Path, gt: &Path) -> CliResult<Vec<(Image, Image)>> {
    let mut pairs = Vec::new();
    for i in 0.. {
        let name = DirLabelProvider::file_name(i);
        let (p, g) = (pred.join(&name), gt.join(&name));
        if !g.is_file() {
            break;
        }
        pairs.push((load_image(&p, "predicted image")?, load_image(&g, "reference image")?));
    }
    if pairs.is_empty() {
        return Err(CliError::input(format!("no view_000.png in {}", gt.display())));
    }
    Ok(pairs)
}

pub fn run(args: &MetricsArgs, logger: &Logger) -> CliResult<()> {
    let pred = load_mesh(&args.pred)?;
    let gt = load_mesh(&args.gt)?;
    let mut report =
        compare_meshes(&pred, &gt, args.samples, args.sample_seed).map_err(|e| CliError::input(e.to_string()))?;

    // Both meshes share the ground truth's frame so their renders align.
    let frame = OrthoFrame::fit(&gt);
    if pred.labels().is_some() && gt.labels().is_some() {
        let views = sample_viewpoints(args.view.views, args.view.seed, frame, args.view.resolution)
            .map_err(|e| CliError::input(e.to_string()))?;
        let (p, g) = (render_label_maps(&pred, &views)?, render_label_maps(&gt, &views)?);
        report.add_part_iou(&p, &g).map_err(|e| CliError::input(e.to_string()))?;
    } else {
        report.unavailable.push("part_iou: both meshes need part labels".into());
    }

    let mut pairs = Vec::new();
    if args.color_views {
        if pred.colors().is_none() || gt.colors().is_none() {
            return Err(CliError::input("--color-views needs vertex colors on both meshes"));
        }
        let views = cardinal_viewpoints(frame, args.view.resolution).map_err(|e| CliError::input(e.to_string()))?;
        let (p, g) = (render_color_views(&pred, &views)?, render_color_views(&gt, &views)?);
        pairs.extend(p.into_iter().zip(g));
    }
    if let (Some(p), Some(g)) = (&args.pred_images, &args.gt_images) {
        pairs.extend(image_pairs(p, g)?);
    }
    if pairs.is_empty() {
        report.unavailable.push("psnr: no image pairs given".into());
    } else {
        report.add_psnr(&pairs).map_err(|e| CliError::input(e.to_string()))?;
    }

    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            logger.info("metrics", json!({"out": path, "cd_cm": report.cd_cm, "p2s_cm": report.p2s_cm}));
        }
        None => println!("{}", serde_json::to_string_pretty(&report).expect("serializable")),
    }
    Ok(())
}
