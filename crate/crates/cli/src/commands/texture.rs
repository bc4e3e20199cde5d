use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use parttex::sds::{optimize, OptimizeError, StepRecord, TexturingProblem};
use parttex::sds::{ScoreModel, SdsError};
use parttex::{
    DeltaScore, FieldConfig, Image, OrthoFrame, PartLabel, Precision, SdsConfig,
};
use serde_json::json;

use super::{ensure_dir, load_image, load_mesh, open_oracle, save_mesh, write_file, write_json};
use crate::{CliError, CliResult, ExitKind, Logger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckpointPrecision {
    F32,
    F64,
}

#[derive(Debug, Args, Clone)]
pub struct TextureArgs {
    /// Part-labeled mesh; unlabeled vertices are treated as "others" [published: none]
    #[arg(long)]
    pub mesh: PathBuf,
    /// Front photo used as the reconstruction target for view 0 [published: none]
    #[arg(long)]
    pub front_image: Option<PathBuf>,
    /// Foreground mask for the front photo; pixels brighter than 50% count [published: none]
    #[arg(long, requires = "front_image")]
    pub front_mask: Option<PathBuf>,
    /// Score source: delta:<target.png> or oracle:<endpoint> [published: none]
    #[arg(long)]
    pub score: String,
    /// Optimization steps [published: 4000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Views per step, front view included [published: 4]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Classifier-free guidance scale [published: 100]
    #[arg(long)]
    pub cfg: Option<f64>,
    /// Lower bound of the noise level range [published: 0.02]
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Upper bound of the noise level range [published: 0.98]
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Initial Adam learning rate [published: 1e-2]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Per-step learning-rate decay factor; default reaches 0.1x at step 4000 [published: exponential, rate unstated]
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Seed for field initialization and view/noise sampling [published: none]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the front-view reconstruction loss [published: none]
    #[arg(long)]
    pub recon_weight: Option<f64>,
    /// Weight of the score-distillation term [published: none]
    #[arg(long)]
    pub sds_weight: Option<f64>,
    /// Square render resolution for every view [published: none]
    #[arg(long, default_value_t = parttex::view::DEFAULT_RESOLUTION)]
    pub resolution: u32,
    /// TOML or JSON file with optimization settings; explicit flags win [published: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Text prompt forwarded to the score oracle; repeatable [published: none]
    #[arg(long = "prompt")]
    pub prompts: Vec<String>,
    /// Output directory [published: none]
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Per-request oracle timeout in seconds [published: none]
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
    /// Append every oracle exchange to this transcript file [published: none]
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Parameter precision in the field checkpoint [published: none]
    #[arg(long, value_enum, default_value_t = CheckpointPrecision::F32)]
    pub precision: CheckpointPrecision,
}

fn read_config_file(path: &Path) -> CliResult<SdsConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        Some("toml") => toml::from_str(&text).map_err(|e| e.to_string()),
        _ => return Err(CliError::input(format!("{}: config must be .toml or .json", path.display()))),
    };
    parsed.map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_sds_config(args: &TextureArgs) -> CliResult<SdsConfig> {
    let mut c = match &args.config {
        Some(path) => {
            crate::require_file(path, "config")?;
            read_config_file(path)?
        }
        None => SdsConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { c.$field = v; })*
        };
    }
    apply!(steps => steps, batch => batch, cfg => cfg_scale, t_min => t_min, t_max => t_max,
           lr => lr, lr_decay => lr_decay, seed => seed, recon_weight => recon_weight,
           sds_weight => sds_weight);
    c.validate().map_err(|e| CliError::new(ExitKind::Usage, e.to_string()))?;
    Ok(c)
}

enum ScoreSource {
    Delta(PathBuf),
    Oracle(String),
}

fn parse_score(arg: &str) -> CliResult<ScoreSource> {
    if let Some(p) = arg.strip_prefix("delta:") {
        Ok(ScoreSource::Delta(PathBuf::from(p)))
    } else if let Some(e) = arg.strip_prefix("oracle:") {
        Ok(ScoreSource::Oracle(e.to_string()))
    } else {
        Err(CliError::new(
            ExitKind::Usage,
            format!("--score must be delta:<png> or oracle:<endpoint>, got {arg:?}"),
        ))
    }
}

fn fit_resolution(image: Image, resolution: u32, what: &str, logger: &Logger) -> Image {
    let r = resolution as usize;
    if image.shape() != (r, r) {
        logger.warn(
            "resize",
            json!({"what": what, "from": [image.width(), image.height()], "to": [r, r]}),
        );
        image.resized(r, r)
    } else {
        image
    }
}

fn optimize_error(e: OptimizeError, score_kind: ExitKind) -> CliError {
    let kind = match &e {
        OptimizeError::NonFinite { .. } => ExitKind::Numerical,
        OptimizeError::Sds {
            source: SdsError::Score { .. },
            ..
        } => score_kind,
        OptimizeError::Config(_) => ExitKind::Usage,
        _ => ExitKind::Input,
    };
    CliError::new(kind, e.to_string())
}

pub fn run(args: &TextureArgs, logger: &Logger) -> CliResult<()> {
    let config = resolve_sds_config(args)?;
    let source = parse_score(&args.score)?;
    if args.resolution < parttex::raster::MIN_RESOLUTION {
        return Err(CliError::new(
            ExitKind::Usage,
            format!("--resolution must be at least {}", parttex::raster::MIN_RESOLUTION),
        ));
    }
    let mesh = load_mesh(&args.mesh)?;
    let mesh = if mesh.labels().is_some() {
        mesh
    } else {
        logger.warn("unlabeled-mesh", json!({"fill": PartLabel::Others.name()}));
        let labels = vec![PartLabel::Others; mesh.vertex_count()];
        mesh.with_labels(labels).map_err(|e| CliError::input(e.to_string()))?
    };
    let front = match &args.front_image {
        Some(p) => Some(fit_resolution(load_image(p, "front image")?, args.resolution, "front image", logger)),
        None => None,
    };
    let mask = match &args.front_mask {
        Some(p) => {
            let m = fit_resolution(load_image(p, "front mask")?, args.resolution, "front mask", logger);
            Some(
                (0..m.pixel_count())
                    .map(|i| m.pixel(i).iter().sum::<f64>() / 3.0 > 0.5)
                    .collect::<Vec<bool>>(),
            )
        }
        None => None,
    };

    let (mut score, score_kind): (Box<dyn ScoreModel>, ExitKind) = match &source {
        ScoreSource::Delta(path) => {
            let target = fit_resolution(load_image(path, "delta target")?, args.resolution, "delta target", logger);
            (Box::new(DeltaScore::new(target, config.schedule)), ExitKind::Input)
        }
        ScoreSource::Oracle(endpoint) => {
            let client = open_oracle(endpoint, args.timeout, args.record.as_ref())?;
            (Box::new(client), ExitKind::Oracle)
        }
    };

    let frame = OrthoFrame::fit(&mesh);
    let mut problem = TexturingProblem::new(&mesh, frame, args.resolution)
        .map_err(|e| CliError::input(e.to_string()))?
        .with_prompts(args.prompts.clone());
    if let Some(image) = front {
        problem = problem.with_front_image(image, mask).map_err(|e| CliError::input(e.to_string()))?;
    }
    let field = problem
        .init_field(FieldConfig::default(), config.seed)
        .map_err(|e| CliError::new(ExitKind::Internal, e.to_string()))?;

    ensure_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("config.json"), &config)?;
    let progress_path = args.out_dir.join("progress.jsonl");
    let mut progress = BufWriter::new(
        File::create(&progress_path).map_err(|e| CliError::output(format!("{}: {e}", progress_path.display())))?,
    );
    let mut write_err: Option<std::io::Error> = None;
    let log_every = (config.steps / 20).max(1);
    logger.info(
        "texture-start",
        json!({"steps": config.steps, "batch": config.batch, "resolution": args.resolution,
               "parameters": field.parameter_count()}),
    );
    let mut observer = |r: &StepRecord| {
        let line = json!({"step": r.step, "lr": r.lr, "recon_loss": r.recon_loss,
                          "sds_grad_rms": r.sds_grad_rms, "grad_norm": r.grad_norm});
        if write_err.is_none() {
            if let Err(e) = writeln!(progress, "{line}") {
                write_err = Some(e);
            }
        }
        if (r.step + 1).is_multiple_of(log_every) {
            logger.info("texture-step", line);
        }
    };
    let result = optimize(&problem, field, score.as_mut(), &config, &mut observer)
        .map_err(|e| optimize_error(e, score_kind))?;
    if let Some(e) = write_err {
        return Err(CliError::output(format!("{}: {e}", progress_path.display())));
    }
    progress
        .flush()
        .map_err(|e| CliError::output(format!("{}: {e}", progress_path.display())))?;

    save_mesh(&result.mesh, &args.out_dir.join("textured.ply"))?;
    let precision = match args.precision {
        CheckpointPrecision::F32 => Precision::F32,
        CheckpointPrecision::F64 => Precision::F64,
    };
    write_file(
        &args.out_dir.join("field.ptcf"),
        &result.field.to_checkpoint_bytes(precision, result.steps),
    )?;
    let (front_render, _) = problem
        .render_field(&result.field, problem.front_view())
        .map_err(|e| CliError::input(e.to_string()))?;
    write_file(&args.out_dir.join("front.png"), &front_render.to_png_bytes())?;
    logger.info("texture-done", json!({"steps": result.steps, "out_dir": args.out_dir}));
    Ok(())
}
