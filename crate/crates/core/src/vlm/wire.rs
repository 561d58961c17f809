use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{AssessmentRequest, VlmError};

/// JSON body POSTed to an endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestBody {
    pub prompt: String,
    /// Base64-encoded PNG.
    pub query_image: String,
    pub references: Vec<String>,
    pub request_id: String,
}

impl RequestBody {
    pub fn encode(request: &AssessmentRequest, request_id: &str) -> Self {
        Self {
            prompt: request.prompt.clone(),
            query_image: STANDARD.encode(&request.query_image),
            references: request
                .reference_images
                .iter()
                .map(|r| STANDARD.encode(r))
                .collect(),
            request_id: request_id.to_string(),
        }
    }

    pub fn decode(&self) -> Result<AssessmentRequest, VlmError> {
        let bad = |e: base64::DecodeError| VlmError::InvalidRequest(format!("bad base64: {e}"));
        Ok(AssessmentRequest {
            prompt: self.prompt.clone(),
            query_image: STANDARD.decode(&self.query_image).map_err(bad)?,
            reference_images: self
                .references
                .iter()
                .map(|r| STANDARD.decode(r).map_err(bad))
                .collect::<Result<_, _>>()?,
        })
    }
}

/// JSON body an endpoint answers with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub verdict: bool,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl ResponseBody {
    /// Parses a response body; anything but an object with a boolean
    /// `verdict` and a string `model` is an error message.
    pub fn parse(body: &[u8]) -> Result<Self, String> {
        serde_json::from_slice(body).map_err(|e| e.to_string())
    }
}
