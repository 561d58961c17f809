use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::imaging::corpus::resolve;
use crate::imaging::ImageBuffer;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    #[default]
    RealReference,
    Candidate,
}

/// A corpus entry: caption embedding, visual embedding and image location.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub caption_embedding: Vec<f64>,
    pub visual_embedding: Vec<f64>,
    pub image_path: String,
    pub tier: Tier,
}

impl Record {
    pub fn new(
        id: impl Into<String>,
        caption_embedding: Vec<f64>,
        visual_embedding: Vec<f64>,
        image_path: impl Into<String>,
        tier: Tier,
    ) -> Self {
        Self {
            id: id.into(),
            caption_embedding,
            visual_embedding,
            image_path: image_path.into(),
            tier,
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default)]
    pub caption: String,
    pub caption_embedding_path: String,
    pub visual_embedding_path: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
}

pub fn encode_embedding(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<Vec<f64>, String> {
    if bytes.len() < 8 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err("missing EMB1 magic".into());
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * dim {
        return Err(format!(
            "dimension {dim} needs {} bytes, found {}",
            4 * dim,
            body.len()
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(values)
}

pub fn read_embedding(path: &Path) -> Result<Vec<f64>, DistillError> {
    let bytes = fs::read(path).map_err(|source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_embedding(&bytes).map_err(|message| DistillError::Embedding {
        path: path.to_path_buf(),
        message,
    })
}

pub fn write_embedding(path: &Path, values: &[f64]) -> Result<(), DistillError> {
    fs::write(path, encode_embedding(values)).map_err(|source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a JSON-lines manifest, skipping blank lines.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DistillError> {
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

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DistillError> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| DistillError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the embeddings named by manifest entries. Relative paths resolve
/// against `root`; the image path is resolved but not read.
pub fn load_records(
    root: &Path,
    entries: &[ManifestEntry],
    default_tier: Tier,
) -> Result<Vec<Record>, DistillError> {
    entries
        .iter()
        .map(|e| {
            Ok(Record {
                id: e.id.clone(),
                caption_embedding: read_embedding(&resolve(root, &e.caption_embedding_path))?,
                visual_embedding: read_embedding(&resolve(root, &e.visual_embedding_path))?,
                image_path: resolve(root, &e.image_path).to_string_lossy().into_owned(),
                tier: e.tier.unwrap_or(default_tier),
            })
        })
        .collect()
}

/// Immutable, validated set of real references.
#[derive(Debug, Clone, Default)]
pub struct Database {
    records: Vec<Record>,
    index: HashMap<String, usize>,
    caption_dim: usize,
    visual_dim: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Database {
    /// Checks ids are unique, dimensions agree and visual embeddings are nonzero.
    pub fn new(records: Vec<Record>) -> Result<Self, DistillError> {
        let mut index = HashMap::with_capacity(records.len());
        let (caption_dim, visual_dim) = records.first().map_or((0, 0), |r| {
            (r.caption_embedding.len(), r.visual_embedding.len())
        });
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(DistillError::DuplicateId(r.id.clone()));
            }
            check_dims(r, caption_dim, visual_dim)?;
        }
        Ok(Self {
            records,
            index,
            caption_dim,
            visual_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// `(caption, visual)` embedding dimensions; zero for an empty database.
    pub fn dims(&self) -> (usize, usize) {
        (self.caption_dim, self.visual_dim)
    }

    /// Checks that a query's embeddings are compatible with this database.
    pub fn check_query(&self, query: &Record) -> Result<(), DistillError> {
        if self.is_empty() {
            return Err(DistillError::EmptyDatabase);
        }
        check_dims(query, self.caption_dim, self.visual_dim)
    }
}

fn check_dims(r: &Record, caption_dim: usize, visual_dim: usize) -> Result<(), DistillError> {
    for (field, expected, actual) in [
        ("caption_embedding", caption_dim, r.caption_embedding.len()),
        ("visual_embedding", visual_dim, r.visual_embedding.len()),
    ] {
        if expected != actual || actual == 0 {
            return Err(DistillError::DimensionMismatch {
                id: r.id.clone(),
                field,
                expected,
                actual,
            });
        }
    }
    if norm(&r.visual_embedding) == 0.0 {
        return Err(DistillError::ZeroNorm(r.id.clone()));
    }
    Ok(())
}

/// Reads a reference manifest and builds the database from it.
pub fn build_database(manifest: &Path) -> Result<Database, DistillError> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(manifest)?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(DistillError::DuplicateId(e.id.clone()));
        }
        if e.tier == Some(Tier::Candidate) {
            return Err(DistillError::NotReference(e.id.clone()));
        }
    }
    Database::new(load_records(root, &entries, Tier::RealReference)?)
}

/// Source of images by path.
pub trait ImageStore: Send + Sync {
    fn load(&self, path: &str) -> Result<ImageBuffer, DistillError>;
}

/// Reads PNG files, resolving relative paths against a root directory.
#[derive(Debug, Clone)]
pub struct FsImageStore {
    root: PathBuf,
}

impl FsImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageStore for FsImageStore {
    fn load(&self, path: &str) -> Result<ImageBuffer, DistillError> {
        Ok(ImageBuffer::load_png(&resolve(&self.root, path))?)
    }
}

/// Images held in memory, keyed by path.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageStore {
    images: HashMap<String, ImageBuffer>,
}

impl MemoryImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, image: ImageBuffer) {
        self.images.insert(path.into(), image);
    }
}

impl ImageStore for MemoryImageStore {
    fn load(&self, path: &str) -> Result<ImageBuffer, DistillError> {
        self.images
            .get(path)
            .cloned()
            .ok_or_else(|| DistillError::Io {
                path: PathBuf::from(path),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such image"),
            })
    }
}
