use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;

use super::{OracleRequest, OracleResponse, Payload, RequestBody};
use crate::image::LabelMap;
use crate::mesh::PartLabel;
use crate::sds::DeltaScore;

/// Model-free oracle: `segment` labels every non-white pixel `others` (5)
/// and `predict_noise` evaluates a delta score. Deterministic.
#[derive(Debug, Clone, Default)]
pub struct StubOracle {
    pub delta: Option<DeltaScore>,
}

impl StubOracle {
    pub fn new(delta: Option<DeltaScore>) -> Self {
        StubOracle { delta }
    }

    /// Handles one request line. Malformed input yields an error response
    /// carrying the request id when one can be recovered, else 0.
    pub fn handle_line(&mut self, line: &str) -> String {
        let response = match serde_json::from_str::<OracleRequest>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                OracleResponse::error(id, format!("malformed request: {e}"))
            }
        };
        serde_json::to_string(&response).expect("response serializes")
    }

    pub fn handle(&mut self, req: &OracleRequest) -> OracleResponse {
        let id = req.id;
        match &req.body {
            RequestBody::Ping => OracleResponse::pong(id),
            RequestBody::Segment { image, .. } => match image.to_image() {
                Ok(img) => {
                    let mut map = LabelMap::new(img.width(), img.height());
                    for p in 0..img.pixel_count() {
                        if img.pixel(p).iter().any(|&c| c < 1.0) {
                            map.set(p, PartLabel::Others);
                        }
                    }
                    OracleResponse::ok(id, Payload::png_labels(&map))
                }
                Err(e) => OracleResponse::error(id, e.to_string()),
            },
            RequestBody::PredictNoise { image, t, .. } => {
                let Some(delta) = &self.delta else {
                    return OracleResponse::error(id, "stub has no delta-score target");
                };
                match image.to_image() {
                    Ok(x) => match delta.predict(&x, *t) {
                        Ok(eps) => OracleResponse::ok(id, Payload::f32le(&eps)),
                        Err(e) => OracleResponse::error(id, e.to_string()),
                    },
                    Err(e) => OracleResponse::error(id, e.to_string()),
                }
            }
        }
    }
}

/// Serves one connection until the peer closes it.
pub fn serve_connection(stream: TcpStream, stub: &mut StubOracle) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writer.write_all(stub.handle_line(&line).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
