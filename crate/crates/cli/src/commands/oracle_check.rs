use std::time::Instant;

use clap::Args;
use serde_json::json;

use super::{open_oracle, oracle_error};
use crate::{CliResult, Logger};

#[derive(Debug, Args, Clone)]
pub struct OracleCheckArgs {
    /// Oracle endpoint: tcp://host:port, stdio:<command>, or replay:<transcript> [published: none]
    #[arg(long)]
    pub oracle: String,
    /// Per-request timeout in seconds [published: none]
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
}

pub fn run(args: &OracleCheckArgs, logger: &Logger) -> CliResult<()> {
    let mut client = open_oracle(&args.oracle, args.timeout, None)?;
    let start = Instant::now();
    let id = client.ping().map_err(oracle_error)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    println!("{}", json!({"endpoint": args.oracle, "ok": true, "id": id, "latency_ms": ms}));
    logger.info("oracle-check", json!({"endpoint": args.oracle, "latency_ms": ms}));
    Ok(())
}
