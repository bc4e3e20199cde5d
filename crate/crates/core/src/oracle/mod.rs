//! Client side of the oracle wire protocol: newline-delimited JSON requests
//! for segmentation and noise prediction, with base64 binary payloads.
//!
//! The protocol is specified in `docs/oracle-protocol.md`.

mod client;
mod stub;
mod transport;

pub use client::{OracleClient, DEFAULT_TIMEOUT};
pub use stub::{serve_connection, StubOracle};
pub use transport::{
    request_key, Endpoint, InProcess, RecordingTransport, ReplayTransport, StdioTransport, TcpTransport, Transport,
    TranscriptEntry,
};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, ImageError, LabelMap};
use crate::view::Viewpoint;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cannot reach oracle at {endpoint}: {message}")]
    Connect { endpoint: String, message: String },
    #[error("request {id} timed out after {secs:.1} s")]
    Timeout { id: u64, secs: f64 },
    #[error("oracle closed the connection")]
    Closed,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("label code {code} at pixel {index} is outside 0..=5")]
    LabelCode { code: u8, index: usize },
    #[error("payload shape: {0}")]
    Shape(String),
    #[error("noise level t={0} outside (0, 1)")]
    InvalidT(f64),
    #[error("oracle error for request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("transcript has no response for request {key}")]
    TranscriptMiss { key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ImageError> for OracleError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::LabelCode { code, index } => OracleError::LabelCode { code, index },
            ImageError::Shape(s) => OracleError::Shape(s),
            other => OracleError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadFormat {
    /// PNG file bytes: 8-bit RGB images or 8-bit gray label maps.
    Png,
    /// Row-major interleaved little-endian `f32` values.
    F32le,
}

/// Binary payload with its declared shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub format: PayloadFormat,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Standard base64 with padding.
    pub data: String,
}

impl Payload {
    pub fn png_rgb(image: &Image) -> Payload {
        Payload {
            format: PayloadFormat::Png,
            width: image.width() as u32,
            height: image.height() as u32,
            channels: 3,
            data: B64.encode(image.to_png_bytes()),
        }
    }

    pub fn png_labels(map: &LabelMap) -> Payload {
        Payload {
            format: PayloadFormat::Png,
            width: map.width() as u32,
            height: map.height() as u32,
            channels: 1,
            data: B64.encode(map.to_png_bytes()),
        }
    }

    pub fn f32le(image: &Image) -> Payload {
        let mut bytes = Vec::with_capacity(image.data().len() * 4);
        for &v in image.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Payload {
            format: PayloadFormat::F32le,
            width: image.width() as u32,
            height: image.height() as u32,
            channels: 3,
            data: B64.encode(bytes),
        }
    }

    fn bytes(&self) -> Result<Vec<u8>, OracleError> {
        B64.decode(&self.data)
            .map_err(|e| OracleError::Malformed(format!("base64: {e}")))
    }

    fn expect(&self, format: PayloadFormat, channels: u32) -> Result<(), OracleError> {
        if self.format != format || self.channels != channels {
            return Err(OracleError::Shape(format!(
                "expected {format:?} with {channels} channels, got {:?} with {}",
                self.format, self.channels
            )));
        }
        Ok(())
    }

    /// Checks the declared size against `(width, height)`.
    pub fn expect_size(&self, width: usize, height: usize) -> Result<(), OracleError> {
        if (self.width as usize, self.height as usize) != (width, height) {
            return Err(OracleError::Shape(format!(
                "declared {}x{}, expected {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn to_image(&self) -> Result<Image, OracleError> {
        match self.format {
            PayloadFormat::F32le => {
                self.expect(PayloadFormat::F32le, 3)?;
                let bytes = self.bytes()?;
                let n = self.width as usize * self.height as usize * 3;
                if bytes.len() != n * 4 {
                    return Err(OracleError::Shape(format!(
                        "{} bytes for declared {}x{}x3 f32",
                        bytes.len(),
                        self.width,
                        self.height
                    )));
                }
                let data = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                Ok(Image::from_raw(self.width as usize, self.height as usize, data)?)
            }
            PayloadFormat::Png => {
                self.expect(PayloadFormat::Png, 3)?;
                let img = Image::from_png_bytes(&self.bytes()?)?;
                self.expect_size(img.width(), img.height())?;
                Ok(img)
            }
        }
    }

    pub fn to_label_map(&self) -> Result<LabelMap, OracleError> {
        self.expect(PayloadFormat::Png, 1)?;
        let map = LabelMap::from_png_bytes(&self.bytes()?)?;
        self.expect_size(map.width(), map.height())?;
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RequestBody {
    Ping,
    Segment {
        /// Normal map, or the input photo when `front` is set.
        image: Payload,
        front: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        view: Option<Viewpoint>,
    },
    PredictNoise {
        /// Noisy image `x_t` as `f32le`.
        image: Payload,
        t: f64,
        conditional: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_map: Option<Payload>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        front_image: Option<Payload>,
        #[serde(default)]
        prompts: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        view: Option<Viewpoint>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub id: u64,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub id: u64,
    pub status: Status,
    /// `"pong"` for ping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl OracleResponse {
    pub fn pong(id: u64) -> Self {
        OracleResponse {
            id,
            status: Status::Ok,
            op: Some("pong".into()),
            payload: None,
            error: None,
        }
    }

    pub fn ok(id: u64, payload: Payload) -> Self {
        OracleResponse {
            id,
            status: Status::Ok,
            op: None,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        OracleResponse {
            id,
            status: Status::Error,
            op: None,
            payload: None,
            error: Some(message.into()),
        }
    }
}
