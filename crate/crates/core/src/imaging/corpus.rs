use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{degrade, synth_clean, DegradationKind, DegradationSpec};
use super::{ImageBuffer, ImagingError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Side length of the square images.
    pub size: usize,
    /// Pairs per degradation kind, in `DRS, DRD, NRS, NRD` order.
    pub per_type: [usize; 4],
    pub base_seed: u64,
    pub intensity_min: f64,
    pub intensity_max: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            size: 32,
            per_type: [1000; 4],
            base_seed: 0,
            intensity_min: 0.4,
            intensity_max: 1.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let bad = |m: &str| Err(ImagingError::InvalidCorpusConfig(m.to_string()));
        if self.size < 4 {
            return bad("size must be at least 4");
        }
        if !(self.intensity_min > 0.0
            && self.intensity_min <= self.intensity_max
            && self.intensity_max <= 1.0)
        {
            return bad("intensities must satisfy 0 < intensity_min <= intensity_max <= 1");
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.per_type.iter().sum()
    }

    /// Kind of the `index`-th image; images are laid out type by type.
    pub fn kind_of(&self, index: usize) -> DegradationKind {
        let mut rest = index;
        for (kind, &n) in DegradationKind::ALL.iter().zip(&self.per_type) {
            if rest < n {
                return *kind;
            }
            rest -= n;
        }
        panic!("image index {index} beyond corpus of {}", self.total());
    }
}

/// One clean/degraded pair, generated in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    pub id: String,
    pub kind: DegradationKind,
    pub seed: u64,
    pub clean: ImageBuffer,
    pub degraded: ImageBuffer,
}

/// Generates pair `index` of the corpus. Its seed is `base_seed + index`.
pub fn generate_pair(config: &CorpusConfig, index: usize) -> CorpusPair {
    let kind = config.kind_of(index);
    let seed = config.base_seed.wrapping_add(index as u64);
    let clean = synth_clean(seed, config.size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0xc0de);
    let intensity = if config.intensity_min == config.intensity_max {
        config.intensity_min
    } else {
        rng.random_range(config.intensity_min..=config.intensity_max)
    };
    let degraded = degrade(
        &clean,
        &DegradationSpec {
            kind,
            intensity,
            seed,
        },
    );
    CorpusPair {
        id: format!("{}-{index:05}", kind.code()),
        kind,
        seed,
        clean,
        degraded,
    }
}

/// Generates the whole corpus in memory, in index order.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<CorpusPair>, ImagingError> {
    config.validate()?;
    Ok((0..config.total())
        .into_par_iter()
        .map(|i| generate_pair(config, i))
        .collect())
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: DegradationKind,
    pub clean_path: String,
    pub degraded_path: String,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `clean/<id>.png`, `degraded/<id>.png` and `manifest.jsonl` under
/// `out_dir`. Manifest paths are relative to `out_dir`.
pub fn gen_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<Vec<CorpusEntry>, ImagingError> {
    config.validate()?;
    for sub in ["clean", "degraded"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|source| ImagingError::Io { path: dir, source })?;
    }
    let entries = (0..config.total())
        .into_par_iter()
        .map(|i| {
            let pair = generate_pair(config, i);
            let clean_path = format!("clean/{}.png", pair.id);
            let degraded_path = format!("degraded/{}.png", pair.id);
            pair.clean.save_png(&out_dir.join(&clean_path))?;
            pair.degraded.save_png(&out_dir.join(&degraded_path))?;
            Ok(CorpusEntry {
                id: pair.id,
                kind: pair.kind,
                clean_path,
                degraded_path,
                seed: pair.seed,
            })
        })
        .collect::<Result<Vec<_>, ImagingError>>()?;

    let path = out_dir.join(MANIFEST_FILE);
    let io_err = |source| ImagingError::Io {
        path: path.clone(),
        source,
    };
    let mut file = fs::File::create(&path).map_err(io_err)?;
    for e in &entries {
        let line = serde_json::to_string(e).expect("manifest entry serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(entries)
}

pub fn read_corpus_manifest(path: &Path) -> Result<Vec<CorpusEntry>, ImagingError> {
    let io_err = |source| ImagingError::Io {
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
        let entry = serde_json::from_str(&line).map_err(|e| ImagingError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Loads the pairs named by a manifest; paths resolve against `root`.
pub fn load_corpus(root: &Path, entries: &[CorpusEntry]) -> Result<Vec<CorpusPair>, ImagingError> {
    entries
        .par_iter()
        .map(|e| {
            Ok(CorpusPair {
                id: e.id.clone(),
                kind: e.kind,
                seed: e.seed,
                clean: ImageBuffer::load_png(&resolve(root, &e.clean_path))?,
                degraded: ImageBuffer::load_png(&resolve(root, &e.degraded_path))?,
            })
        })
        .collect()
}

pub(crate) fn resolve(root: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_type_by_type() {
        let c = CorpusConfig {
            per_type: [2, 1, 0, 3],
            ..Default::default()
        };
        let kinds: Vec<_> = (0..c.total()).map(|i| c.kind_of(i)).collect();
        use DegradationKind::*;
        assert_eq!(
            kinds,
            vec![DayStreak, DayStreak, DayDrop, NightDrop, NightDrop, NightDrop]
        );
    }

    #[test]
    fn writes_manifest_and_images() {
        let dir = tempfile::tempdir().unwrap();
        let c = CorpusConfig {
            size: 16,
            per_type: [2, 2, 1, 1],
            base_seed: 40,
            ..Default::default()
        };
        let entries = gen_corpus(&c, dir.path()).unwrap();
        assert_eq!(entries.len(), 6);
        assert_eq!(entries[4].seed, 44);
        let back = read_corpus_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, entries);
        let line = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(line
            .starts_with(r#"{"id":"DRS-00000","type":"DRS","clean_path":"clean/DRS-00000.png""#));
        let pairs = load_corpus(dir.path(), &back).unwrap();
        let fresh = generate_pair(&c, 3);
        assert_eq!(pairs[3].degraded.to_u8(), fresh.degraded.to_u8());
    }

    #[test]
    fn rejects_bad_config() {
        let c = CorpusConfig {
            intensity_min: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = CorpusConfig {
            size: 2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_directory_reports_path() {
        let err = read_corpus_manifest(Path::new("/nonexistent/manifest.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/manifest.jsonl"));
    }
}
