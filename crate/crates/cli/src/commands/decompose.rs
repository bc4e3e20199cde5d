use std::path::PathBuf;

use clap::Args;
use parttex::PartLabel;
use serde_json::json;

use super::{ensure_dir, load_mesh, save_mesh};
use crate::{CliError, CliResult, Logger};

#[derive(Debug, Args, Clone)]
pub struct DecomposeArgs {
    /// Part-labeled mesh [published: none]
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output directory; one <part-name>.ply per non-empty part [published: none]
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(args: &DecomposeArgs, logger: &Logger) -> CliResult<()> {
    let mesh = load_mesh(&args.mesh)?;
    if mesh.labels().is_none() {
        return Err(CliError::input(format!("{} has no part labels", args.mesh.display())));
    }
    ensure_dir(&args.out_dir)?;
    let mut written = serde_json::Map::new();
    for part in PartLabel::FOREGROUND {
        let sub = mesh.extract_part(part).map_err(|e| CliError::input(e.to_string()))?;
        if sub.face_count() == 0 {
            continue;
        }
        save_mesh(&sub, &args.out_dir.join(format!("{}.ply", part.name())))?;
        written.insert(part.name().into(), json!({"vertices": sub.vertex_count(), "faces": sub.face_count()}));
    }
    logger.info("decompose", json!({"parts": written, "out_dir": args.out_dir}));
    Ok(())
}
