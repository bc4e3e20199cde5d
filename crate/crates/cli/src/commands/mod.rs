pub mod decompose;
pub mod metrics;
pub mod oracle_check;
pub mod render;
pub mod segment;
pub mod texture;

use std::path::{Path, PathBuf};
use std::time::Duration;

use parttex::oracle::{Endpoint, OracleClient, OracleError, RecordingTransport};
use parttex::{Image, Mesh};

use crate::{require_file, CliError, CliResult, ExitKind};

pub(crate) fn load_mesh(path: &Path) -> CliResult<Mesh> {
    require_file(path, "mesh")?;
    parttex::load_mesh(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub(crate) fn save_mesh(mesh: &Mesh, path: &Path) -> CliResult<()> {
    parttex::save_mesh(mesh, path).map_err(|e| CliError::output(format!("{}: {e}", path.display())))
}

pub(crate) fn load_image(path: &Path, what: &str) -> CliResult<Image> {
    require_file(path, what)?;
    Image::load_png(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub(crate) fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::output(format!("{}: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::output(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn oracle_error(e: OracleError) -> CliError {
    CliError::new(ExitKind::Oracle, e.to_string())
}

/// Opens an oracle connection, optionally recording a transcript.
pub(crate) fn open_oracle(endpoint: &str, timeout_secs: f64, record: Option<&PathBuf>) -> CliResult<OracleClient> {
    let endpoint: Endpoint = endpoint
        .parse()
        .map_err(|e: String| CliError::new(ExitKind::Usage, e))?;
    if let Endpoint::Replay(p) = &endpoint {
        require_file(p, "transcript")?;
    }
    let timeout = Duration::from_secs_f64(timeout_secs);
    let transport = endpoint.open(timeout).map_err(oracle_error)?;
    let transport: Box<dyn parttex::oracle::Transport> = match record {
        Some(path) => Box::new(
            RecordingTransport::create(transport, path).map_err(|e| CliError::output(e.to_string()))?,
        ),
        None => transport,
    };
    Ok(OracleClient::new(transport).with_timeout(timeout))
}
