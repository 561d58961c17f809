//! Client side of the image-assessment protocol.
//!
//! An endpoint receives a degraded query image, a few reference images and a
//! prompt, and answers with a strictly binary verdict. [`HttpEndpoint`] speaks
//! the JSON wire format over HTTP with bounded retries; [`MockEndpoint`] answers
//! in-process from a fixed rule and is what the tests and offline runs use.

mod http;
mod mock;
pub mod stub;
mod wire;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::{ImageBuffer, ImagingError};

pub use http::HttpEndpoint;
pub use mock::{MockEndpoint, MockRule};
pub use wire::{RequestBody, ResponseBody};

/// Prompt used when a run does not configure one.
pub const DEFAULT_PROMPT: &str = "You are shown a degraded query image followed by real reference images of the \
same kind of rain. Answer whether the query is a realistic, high-quality example of that degradation, \
consistent with the references. Reply with JSON {\"verdict\": true} to accept or {\"verdict\": false} to reject.";

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed response after {attempts} attempts: {message}")]
    Protocol { attempts: u32, message: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

impl VlmError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            VlmError::Exhausted { attempts, .. } | VlmError::Protocol { attempts, .. } => {
                Some(*attempts)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Delay before the first retry; doubles after each further failure.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub bearer_token: Option<String>,
    #[serde(default = "default_max_payload_bytes")]
    pub max_payload_bytes: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_payload_bytes() -> usize {
    16 << 20
}

pub const MAX_RETRIES_LIMIT: u32 = 10;

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
            bearer_token: None,
            max_payload_bytes: default_max_payload_bytes(),
        }
    }

    pub fn validate(&self) -> Result<(), VlmError> {
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(VlmError::InvalidConfig(format!(
                "url {:?} is not http(s)",
                self.url
            )));
        }
        if self.timeout_ms == 0 || self.backoff_ms == 0 {
            return Err(VlmError::InvalidConfig(
                "timeout_ms and backoff_ms must be positive".into(),
            ));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(VlmError::InvalidConfig(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.max_payload_bytes == 0 {
            return Err(VlmError::InvalidConfig(
                "max_payload_bytes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sleep before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << (retry - 1).min(32)))
    }
}

/// PNG-encoded query, references and prompt for one assessment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssessmentRequest {
    pub query_image: Vec<u8>,
    pub reference_images: Vec<Vec<u8>>,
    pub prompt: String,
}

impl AssessmentRequest {
    pub fn new(
        query_image: Vec<u8>,
        reference_images: Vec<Vec<u8>>,
        prompt: impl Into<String>,
    ) -> Self {
        Self {
            query_image,
            reference_images,
            prompt: prompt.into(),
        }
    }

    pub fn from_images(
        query: &ImageBuffer,
        references: &[ImageBuffer],
        prompt: &str,
    ) -> Result<Self, VlmError> {
        Ok(Self {
            query_image: query.encode_png()?,
            reference_images: references
                .iter()
                .map(ImageBuffer::encode_png)
                .collect::<Result<_, _>>()?,
            prompt: prompt.to_string(),
        })
    }

    pub fn payload_bytes(&self) -> usize {
        self.query_image.len()
            + self.reference_images.iter().map(Vec::len).sum::<usize>()
            + self.prompt.len()
    }

    pub fn validate(&self, max_payload_bytes: usize) -> Result<(), VlmError> {
        if self.query_image.is_empty() {
            return Err(VlmError::InvalidRequest("query image is empty".into()));
        }
        if self.payload_bytes() > max_payload_bytes {
            return Err(VlmError::InvalidRequest(format!(
                "payload of {} bytes exceeds the {max_payload_bytes}-byte cap",
                self.payload_bytes()
            )));
        }
        Ok(())
    }

    /// SHA-256 over the prompt and images, each prefixed with its length.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in std::iter::once(self.prompt.as_bytes())
            .chain(std::iter::once(self.query_image.as_slice()))
            .chain(self.reference_images.iter().map(Vec::as_slice))
        {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        hex::encode(h.finalize())
    }
}

/// A parsed, well-formed verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub accept: bool,
    pub model: String,
    pub rationale: Option<String>,
    pub attempts: u32,
}

/// Anything that can judge an [`AssessmentRequest`].
pub trait Endpoint: Send + Sync {
    fn name(&self) -> &str;

    fn assess(&self, request: &AssessmentRequest, request_id: &str) -> Result<Verdict, VlmError>;
}
