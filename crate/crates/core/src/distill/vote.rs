use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::imaging::ImageBuffer;
use crate::vlm::{AssessmentRequest, Endpoint};

pub const ENSEMBLE_SIZE: usize = 3;

/// Accept iff at least two of the three verdicts accept.
pub fn majority(verdicts: [bool; ENSEMBLE_SIZE]) -> bool {
    verdicts.iter().filter(|&&v| v).count() >= 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleVote {
    pub verdicts: [bool; ENSEMBLE_SIZE],
    pub decision: bool,
}

impl EnsembleVote {
    pub fn new(verdicts: [bool; ENSEMBLE_SIZE]) -> Self {
        Self {
            verdicts,
            decision: majority(verdicts),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditOutcome {
    Accept,
    Reject,
    Error,
}

/// One endpoint call, including all of its retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub query_id: String,
    pub endpoint: String,
    pub request_id: String,
    pub digest: String,
    pub attempts: u32,
    pub latency_ms: f64,
    pub outcome: AuditOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Asks each of the three endpoints about `query_image` given `references`
/// and takes the majority. A failed endpoint counts as a reject and is
/// recorded with its error in the returned audit entries.
pub fn assess(
    query_id: &str,
    query_image: &ImageBuffer,
    references: &[ImageBuffer],
    prompt: &str,
    endpoints: &[Arc<dyn Endpoint>],
) -> Result<(EnsembleVote, Vec<AuditEntry>), DistillError> {
    if endpoints.len() != ENSEMBLE_SIZE {
        return Err(DistillError::EndpointCount {
            expected: ENSEMBLE_SIZE,
            actual: endpoints.len(),
        });
    }
    let request = AssessmentRequest::from_images(query_image, references, prompt)?;
    let digest = request.digest();
    let mut verdicts = [false; ENSEMBLE_SIZE];
    let mut audit = Vec::with_capacity(ENSEMBLE_SIZE);
    for (i, ep) in endpoints.iter().enumerate() {
        let request_id = format!("{query_id}#{i}");
        let start = Instant::now();
        let result = ep.assess(&request, &request_id);
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        let entry = AuditEntry {
            query_id: query_id.to_string(),
            endpoint: ep.name().to_string(),
            request_id,
            digest: digest.clone(),
            attempts: 0,
            latency_ms,
            outcome: AuditOutcome::Error,
            model: None,
            rationale: None,
            error: None,
        };
        audit.push(match result {
            Ok(v) => {
                verdicts[i] = v.accept;
                AuditEntry {
                    attempts: v.attempts,
                    outcome: if v.accept {
                        AuditOutcome::Accept
                    } else {
                        AuditOutcome::Reject
                    },
                    model: Some(v.model),
                    rationale: v.rationale,
                    ..entry
                }
            }
            Err(e) => AuditEntry {
                attempts: e.attempts().unwrap_or(0),
                error: Some(e.to_string()),
                ..entry
            },
        });
    }
    Ok((EnsembleVote::new(verdicts), audit))
}
