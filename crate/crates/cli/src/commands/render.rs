use std::path::PathBuf;

use clap::Args;
use parttex::image::encode_depth;
use parttex::partvote::DirLabelProvider;
use parttex::raster::{self, WHITE};
use parttex::view::{cardinal_viewpoints, sample_viewpoints};
use parttex::{OrthoFrame, Vec3};
use rayon::prelude::*;
use serde_json::json;

use super::{ensure_dir, load_mesh, write_file, write_json};
use crate::{CliError, CliResult, Logger, ViewArgs};

#[derive(Debug, Args, Clone)]
pub struct RenderArgs {
    /// Input mesh (OBJ or PLY) [published: none]
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output directory for normals/, depth/, labels/ and colors/ [published: none]
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub view: ViewArgs,
    /// Render the four turntable views at 0°, 90°, 180°, 270° instead [published: evaluation views]
    #[arg(long)]
    pub cardinal: bool,
}

pub fn run(args: &RenderArgs, logger: &Logger) -> CliResult<()> {
    let mesh = load_mesh(&args.mesh)?;
    let mesh = if mesh.normals().is_some() { mesh } else { mesh.compute_vertex_normals().0 };
    let frame = OrthoFrame::fit(&mesh);
    let views = if args.cardinal {
        cardinal_viewpoints(frame, args.view.resolution).map(Vec::from)
    } else {
        sample_viewpoints(args.view.views, args.view.seed, frame, args.view.resolution)
    }
    .map_err(|e| CliError::input(e.to_string()))?;

    let dirs = ["normals", "depth", "labels", "colors"].map(|d| args.out_dir.join(d));
    ensure_dir(&dirs[0])?;
    ensure_dir(&dirs[1])?;
    if mesh.labels().is_some() {
        ensure_dir(&dirs[2])?;
    }
    if mesh.colors().is_some() {
        ensure_dir(&dirs[3])?;
    }
    let outputs: Vec<CliResult<()>> = views
        .par_iter()
        .enumerate()
        .map(|(i, view)| {
            let name = DirLabelProvider::file_name(i);
            let buffers = raster::rasterize(&mesh, view).map_err(|e| CliError::input(e.to_string()))?;
            write_file(&dirs[0].join(&name), &buffers.normal_map(WHITE).to_png_bytes())?;
            let (w, h) = buffers.shape();
            write_file(
                &dirs[1].join(name.replace(".png", ".ptd")),
                &encode_depth(w, h, buffers.depth()),
            )?;
            if mesh.labels().is_some() {
                let map = raster::labels_from_buffers(&buffers, &mesh).map_err(|e| CliError::input(e.to_string()))?;
                write_file(&dirs[2].join(&name), &map.to_png_bytes())?;
            }
            if let Some(colors) = mesh.colors() {
                let colors: Vec<Vec3> = colors.to_vec();
                let img = raster::shade_vertex_colors(&buffers, &mesh, &colors, WHITE)
                    .map_err(|e| CliError::input(e.to_string()))?;
                write_file(&dirs[3].join(&name), &img.to_png_bytes())?;
            }
            Ok(())
        })
        .collect();
    outputs.into_iter().collect::<CliResult<()>>()?;
    write_json(&args.out_dir.join("views.json"), &views)?;
    logger.info(
        "render",
        json!({"views": views.len(), "resolution": args.view.resolution, "out_dir": args.out_dir}),
    );
    Ok(())
}
