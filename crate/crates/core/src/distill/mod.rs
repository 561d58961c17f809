//! Retrieval-augmented distillation of a degraded-image corpus.
//!
//! Each labeled query is matched against a database of real references in
//! three narrowing stages: caption-embedding distance, visual-embedding cosine
//! similarity, then SSIM on the pixels. The surviving references go to three
//! assessment endpoints together with the query; a majority of accepts puts the
//! query in the middle tier of the output pyramid, anything else in the bottom
//! tier. The references themselves form the top tier.

mod cascade;
mod pyramid;
mod record;
mod vote;

use std::path::PathBuf;

pub use cascade::{
    retrieve, stage1_semantic, stage2_visual, stage3_structural, CandidateSet, Retrieval,
    RetrievalParams, Stage3,
};
pub use pyramid::{
    distill_corpus, read_pyramid, write_audit, write_pyramid, DistillConfig, DistillReport,
    PyramidEntry, PyramidTier, Unprocessable,
};
pub use record::{
    build_database, decode_embedding, encode_embedding, load_records, read_embedding,
    read_manifest, write_embedding, write_manifest, Database, FsImageStore, ImageStore,
    ManifestEntry, MemoryImageStore, Record, Tier, EMBEDDING_MAGIC,
};
pub use vote::{assess, majority, AuditEntry, AuditOutcome, EnsembleVote, ENSEMBLE_SIZE};

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("the reference database is empty")]
    EmptyDatabase,
    #[error("stage {stage}: k must be at least 1")]
    InvalidK { stage: u8 },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: {field} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        id: String,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("record {0:?}: visual embedding has zero norm")]
    ZeroNorm(String),
    #[error("record {0:?} is not in the database")]
    UnknownRecord(String),
    #[error("record {0:?} in the reference manifest is not a real reference")]
    NotReference(String),
    #[error("{}: {message}", path.display())]
    Embedding { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected} endpoints, got {actual}")]
    EndpointCount { expected: usize, actual: usize },
    #[error("invalid distill config: {0}")]
    Config(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Vlm(#[from] crate::vlm::VlmError),
}
