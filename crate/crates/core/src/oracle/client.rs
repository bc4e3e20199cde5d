use std::time::Duration;

use super::{
    Endpoint, OracleError, OracleRequest, OracleResponse, Payload, RequestBody, Status, Transport,
};
use crate::image::{Image, LabelMap};
use crate::partvote::{LabelProvider, ViewInput};
use crate::sds::{Conditions, ScoreModel};
use crate::view::Viewpoint;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// One connection, one request in flight. Ids start at 1 and increase by one
/// per request.
pub struct OracleClient {
    transport: Box<dyn Transport>,
    next_id: u64,
    timeout: Duration,
    /// Input photo sent with front-view segmentation requests.
    front_image: Option<Image>,
    deterministic: bool,
}

impl OracleClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        OracleClient {
            transport,
            next_id: 1,
            timeout: DEFAULT_TIMEOUT,
            front_image: None,
            deterministic: true,
        }
    }

    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, OracleError> {
        Ok(OracleClient::new(endpoint.open(timeout)?).with_timeout(timeout))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_front_image(mut self, image: Option<Image>) -> Self {
        self.front_image = image;
        self
    }

    /// Declares whether the remote model is deterministic.
    pub fn with_deterministic(mut self, deterministic: bool) -> Self {
        self.deterministic = deterministic;
        self
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Sends a request body and returns the matching successful response.
    pub fn call(&mut self, body: RequestBody) -> Result<OracleResponse, OracleError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&OracleRequest { id, body }).expect("request serializes");
        let reply = self.transport.exchange(id, &line, self.timeout)?;
        let response: OracleResponse =
            serde_json::from_str(&reply).map_err(|e| OracleError::Malformed(format!("response: {e}")))?;
        if response.id != id {
            return Err(OracleError::IdMismatch {
                expected: id,
                got: response.id,
            });
        }
        match response.status {
            Status::Ok => Ok(response),
            Status::Error => Err(OracleError::Remote {
                id,
                message: response.error.unwrap_or_default(),
            }),
        }
    }

    pub fn ping(&mut self) -> Result<u64, OracleError> {
        let r = self.call(RequestBody::Ping)?;
        if r.op.as_deref() != Some("pong") {
            return Err(OracleError::Malformed("ping answered without pong".into()));
        }
        Ok(r.id)
    }

    /// Part segments for an image (a normal map, or the input photo with
    /// `front`). The result has the image's resolution.
    pub fn segment(&mut self, image: &Image, front: bool, view: Option<&Viewpoint>) -> Result<LabelMap, OracleError> {
        let r = self.call(RequestBody::Segment {
            image: Payload::png_rgb(image),
            front,
            view: view.copied(),
        })?;
        let payload = r.payload.ok_or_else(|| OracleError::Malformed("segment response without payload".into()))?;
        payload.expect_size(image.width(), image.height())?;
        payload.to_label_map()
    }

    /// Predicted noise for `noisy` at level `t`. `t` outside (0, 1) is
    /// rejected before anything is sent.
    pub fn predict_noise(
        &mut self,
        noisy: &Image,
        t: f64,
        conditions: &Conditions<'_>,
        conditional: bool,
    ) -> Result<Image, OracleError> {
        if !(t > 0.0 && t < 1.0) {
            return Err(OracleError::InvalidT(t));
        }
        let r = self.call(RequestBody::PredictNoise {
            image: Payload::f32le(noisy),
            t,
            conditional,
            label_map: Some(Payload::png_labels(conditions.label_map)),
            front_image: conditions.front_image.map(Payload::png_rgb),
            prompts: conditions.prompts.to_vec(),
            view: conditions.view.copied(),
        })?;
        let payload = r
            .payload
            .ok_or_else(|| OracleError::Malformed("predict_noise response without payload".into()))?;
        payload.expect_size(noisy.width(), noisy.height())?;
        payload.to_image()
    }
}

impl ScoreModel for OracleClient {
    fn predict_noise(
        &mut self,
        noisy: &Image,
        t: f64,
        conditions: &Conditions<'_>,
        conditional: bool,
    ) -> Result<Image, String> {
        OracleClient::predict_noise(self, noisy, t, conditions, conditional).map_err(|e| e.to_string())
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }
}

impl LabelProvider for OracleClient {
    /// View 0 with a configured front image segments the photo; every other
    /// view segments its normal map.
    fn labels(&mut self, input: &ViewInput<'_>) -> Result<LabelMap, String> {
        let front = input.index == 0 && self.front_image.is_some();
        let image = if front {
            let img = self.front_image.as_ref().expect("checked");
            if img.shape() != input.normal_map.shape() {
                return Err(format!(
                    "front image is {:?}, views are {:?}",
                    img.shape(),
                    input.normal_map.shape()
                ));
            }
            img.clone()
        } else {
            input.normal_map.clone()
        };
        self.segment(&image, front, Some(input.view)).map_err(|e| e.to_string())
    }
}
