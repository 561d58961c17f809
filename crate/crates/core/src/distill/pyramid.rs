use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cascade::{retrieve, RetrievalParams};
use super::record::{Database, ImageStore, Record};
use super::vote::{assess, AuditEntry, ENSEMBLE_SIZE};
use super::DistillError;
use crate::vlm::{Endpoint, DEFAULT_PROMPT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub prompt: String,
    /// Queries assessed concurrently; bounds the endpoint calls in flight.
    pub max_in_flight: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let r = RetrievalParams::default();
        Self {
            k1: r.k1,
            k2: r.k2,
            k3: r.k3,
            prompt: DEFAULT_PROMPT.to_string(),
            max_in_flight: 8,
        }
    }
}

impl DistillConfig {
    pub fn retrieval(&self) -> RetrievalParams {
        RetrievalParams {
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        self.retrieval().validate()?;
        if self.max_in_flight == 0 {
            return Err(DistillError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if self.prompt.trim().is_empty() {
            return Err(DistillError::Config("prompt is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PyramidTier {
    Top,
    Middle,
    Bottom,
}

/// One line of the pyramid manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidEntry {
    pub id: String,
    pub tier: PyramidTier,
    /// Scores of the stage-1, stage-2 and stage-3 candidates, in rank order.
    pub stage_scores: Vec<Vec<f64>>,
    /// Ids of the final references shown to the endpoints.
    pub references: Vec<String>,
    pub verdicts: Vec<u8>,
    pub decision: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PyramidEntry {
    fn reference(id: &str) -> Self {
        Self {
            id: id.to_string(),
            tier: PyramidTier::Top,
            stage_scores: Vec::new(),
            references: Vec::new(),
            verdicts: Vec::new(),
            decision: None,
            warnings: Vec::new(),
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unprocessable {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillReport {
    /// References first, then queries in input order.
    pub entries: Vec<PyramidEntry>,
    pub audit: Vec<AuditEntry>,
    pub unprocessable: Vec<Unprocessable>,
}

impl DistillReport {
    /// `(top, middle, bottom)` sizes.
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |t| self.entries.iter().filter(|e| e.tier == t).count();
        (
            count(PyramidTier::Top),
            count(PyramidTier::Middle),
            count(PyramidTier::Bottom),
        )
    }

    /// Share of queries accepted into the middle tier, in percent.
    pub fn retention_percent(&self) -> f64 {
        let (_, m, b) = self.counts();
        if m + b == 0 {
            0.0
        } else {
            100.0 * m as f64 / (m + b) as f64
        }
    }
}

struct Processed {
    entry: PyramidEntry,
    audit: Vec<AuditEntry>,
    failure: Option<String>,
}

fn process(
    query: &Record,
    db: &Database,
    store: &dyn ImageStore,
    endpoints: &[Arc<dyn Endpoint>],
    config: &DistillConfig,
) -> Processed {
    let mut entry = PyramidEntry {
        tier: PyramidTier::Bottom,
        ..PyramidEntry::reference(&query.id)
    };
    let run = |entry: &mut PyramidEntry| -> Result<Vec<AuditEntry>, String> {
        let image = store
            .load(&query.image_path)
            .map_err(|e| format!("query image: {e}"))?;
        let found =
            retrieve(query, &image, db, store, &config.retrieval()).map_err(|e| e.to_string())?;
        entry.stage_scores = vec![
            found.stage1.scores(),
            found.stage2.scores(),
            found.stage3.set.scores(),
        ];
        entry.references = found.result().ids().map(str::to_string).collect();
        entry.warnings = found
            .stage3
            .skipped
            .iter()
            .map(|(id, why)| format!("reference {id} skipped: {why}"))
            .collect();
        if found.result().is_empty() {
            return Err("no reference image survived retrieval".into());
        }
        let (vote, audit) = assess(
            &query.id,
            &image,
            &found.stage3.images,
            &config.prompt,
            endpoints,
        )
        .map_err(|e| e.to_string())?;
        entry.verdicts = vote.verdicts.iter().map(|&v| v as u8).collect();
        entry.decision = Some(vote.decision as u8);
        if vote.decision {
            entry.tier = PyramidTier::Middle;
        }
        Ok(audit)
    };
    match run(&mut entry) {
        Ok(audit) => Processed {
            entry,
            audit,
            failure: None,
        },
        Err(reason) => {
            entry.error = Some(reason.clone());
            Processed {
                entry,
                audit: Vec::new(),
                failure: Some(reason),
            }
        }
    }
}

/// Retrieves references for every query, puts the three endpoints' majority
/// verdict into the pyramid and records every endpoint call.
///
/// Queries that cannot be processed land in the bottom tier with an `error`
/// and are listed in [`DistillReport::unprocessable`]; the rest still run.
pub fn distill_corpus(
    queries: &[Record],
    db: &Database,
    store: &dyn ImageStore,
    endpoints: &[Arc<dyn Endpoint>],
    config: &DistillConfig,
) -> Result<DistillReport, DistillError> {
    config.validate()?;
    if endpoints.len() != ENSEMBLE_SIZE {
        return Err(DistillError::EndpointCount {
            expected: ENSEMBLE_SIZE,
            actual: endpoints.len(),
        });
    }
    let mut seen = HashSet::with_capacity(queries.len());
    for q in queries {
        if db.contains(&q.id) || !seen.insert(q.id.as_str()) {
            return Err(DistillError::DuplicateId(q.id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| DistillError::Config(e.to_string()))?;
    let processed: Vec<Processed> = pool.install(|| {
        queries
            .par_iter()
            .map(|q| process(q, db, store, endpoints, config))
            .collect()
    });

    let mut report = DistillReport {
        entries: db
            .records()
            .iter()
            .map(|r| PyramidEntry::reference(&r.id))
            .collect(),
        ..DistillReport::default()
    };
    for p in processed {
        if let Some(reason) = p.failure {
            report.unprocessable.push(Unprocessable {
                id: p.entry.id.clone(),
                reason,
            });
        }
        report.audit.extend(p.audit);
        report.entries.push(p.entry);
    }
    Ok(report)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DistillError> {
    let io_err = |source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for row in rows {
        let line = serde_json::to_string(row).expect("serializable row");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_pyramid(path: &Path, entries: &[PyramidEntry]) -> Result<(), DistillError> {
    write_jsonl(path, entries)
}

pub fn write_audit(path: &Path, audit: &[AuditEntry]) -> Result<(), DistillError> {
    write_jsonl(path, audit)
}

pub fn read_pyramid(path: &Path) -> Result<Vec<PyramidEntry>, DistillError> {
    let io_err = |source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DistillError::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
