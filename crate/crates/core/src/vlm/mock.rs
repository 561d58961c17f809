use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{AssessmentRequest, Endpoint, Verdict, VlmError};
use crate::imaging::{ssim, ImageBuffer, SsimParams};

/// Decision rule of a [`MockEndpoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockRule {
    Accept,
    Reject,
    /// Accept iff the mean SSIM between the query and the references exceeds
    /// the threshold. References are resized to the query first.
    SsimAbove(f64),
    /// Accept with probability `p`, drawn from the request digest.
    Random(f64),
}

impl fmt::Display for MockRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockRule::Accept => f.write_str("accept"),
            MockRule::Reject => f.write_str("reject"),
            MockRule::SsimAbove(t) => write!(f, "ssim:{t}"),
            MockRule::Random(p) => write!(f, "random:{p}"),
        }
    }
}

impl FromStr for MockRule {
    type Err = VlmError;

    /// `accept`, `reject`, `ssim:<threshold>` or `random:<p>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || VlmError::InvalidConfig(format!("unknown mock rule {s:?}"));
        let s = s.trim();
        match s {
            "accept" => return Ok(MockRule::Accept),
            "reject" => return Ok(MockRule::Reject),
            _ => {}
        }
        let (name, arg) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = arg.trim().parse().map_err(|_| bad())?;
        match name {
            "ssim" if (-1.0..=1.0).contains(&v) => Ok(MockRule::SsimAbove(v)),
            "random" if (0.0..=1.0).contains(&v) => Ok(MockRule::Random(v)),
            _ => Err(bad()),
        }
    }
}

/// Mean SSIM of each reference against the query, after resizing the
/// reference to the query's dimensions. `None` without references.
pub(crate) fn mean_reference_ssim(
    query: &ImageBuffer,
    references: &[ImageBuffer],
) -> Result<Option<f64>, VlmError> {
    if references.is_empty() {
        return Ok(None);
    }
    let params = SsimParams::default();
    let mut total = 0.0;
    for r in references {
        let r = if r.shape() == query.shape() {
            r.clone()
        } else {
            r.resize_bilinear(query.height(), query.width())
        };
        total += ssim(query, &r, &params)?;
    }
    Ok(Some(total / references.len() as f64))
}

/// Offline endpoint whose verdict depends only on the request bytes, the rule
/// and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MockEndpoint {
    name: String,
    rule: MockRule,
    seed: u64,
}

impl MockEndpoint {
    pub fn new(name: impl Into<String>, rule: MockRule, seed: u64) -> Self {
        Self {
            name: name.into(),
            rule,
            seed,
        }
    }

    pub fn rule(&self) -> MockRule {
        self.rule
    }

    pub fn decide(&self, request: &AssessmentRequest) -> Result<bool, VlmError> {
        match self.rule {
            MockRule::Accept => Ok(true),
            MockRule::Reject => Ok(false),
            MockRule::SsimAbove(threshold) => {
                let query = ImageBuffer::decode_png(&request.query_image)?;
                let refs = request
                    .reference_images
                    .iter()
                    .map(|b| ImageBuffer::decode_png(b))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(mean_reference_ssim(&query, &refs)?.is_some_and(|m| m > threshold))
            }
            MockRule::Random(p) => {
                let mut h = Sha256::new();
                h.update(self.seed.to_le_bytes());
                h.update(request.digest().as_bytes());
                let bytes = h.finalize();
                let u = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as f64
                    / 2f64.powi(64);
                Ok(u < p)
            }
        }
    }
}

impl Endpoint for MockEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn assess(&self, request: &AssessmentRequest, _request_id: &str) -> Result<Verdict, VlmError> {
        Ok(Verdict {
            accept: self.decide(request)?,
            model: format!("mock/{}", self.rule),
            rationale: None,
            attempts: 1,
        })
    }
}
