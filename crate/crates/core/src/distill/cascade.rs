use serde::{Deserialize, Serialize};

use super::record::{Database, ImageStore, Record};
use super::DistillError;
use crate::imaging::{ssim, ImageBuffer, SsimParams};

/// Ranked `(record id, score)` pairs produced by one retrieval stage.
///
/// Stage 1 scores are distances (ascending); stages 2 and 3 are similarities
/// (descending). Ties are always broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub stage: u8,
    pub entries: Vec<(String, f64)>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, s)| s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalParams {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            k1: 50,
            k2: 20,
            k3: 5,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), DistillError> {
        for (stage, k) in [(1, self.k1), (2, self.k2), (3, self.k3)] {
            if k == 0 {
                return Err(DistillError::InvalidK { stage });
            }
        }
        Ok(())
    }
}

fn rank(mut scored: Vec<(String, f64)>, ascending: bool, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.1.total_cmp(&b.1)
        } else {
            b.1.total_cmp(&a.1)
        };
        by_score.then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn lookup<'a>(db: &'a Database, id: &str) -> Result<&'a Record, DistillError> {
    db.get(id)
        .ok_or_else(|| DistillError::UnknownRecord(id.to_string()))
}

/// The `k1` references whose caption embeddings are nearest in L2 distance.
/// `k1` larger than the database returns every reference.
pub fn stage1_semantic(
    query: &Record,
    db: &Database,
    k1: usize,
) -> Result<CandidateSet, DistillError> {
    if k1 == 0 {
        return Err(DistillError::InvalidK { stage: 1 });
    }
    db.check_query(query)?;
    let scored = db
        .records()
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                l2(&query.caption_embedding, &r.caption_embedding),
            )
        })
        .collect();
    Ok(CandidateSet {
        stage: 1,
        entries: rank(scored, true, k1),
    })
}

/// The `k2` stage-1 candidates with the highest visual cosine similarity.
pub fn stage2_visual(
    query: &Record,
    c1: &CandidateSet,
    db: &Database,
    k2: usize,
) -> Result<CandidateSet, DistillError> {
    if k2 == 0 {
        return Err(DistillError::InvalidK { stage: 2 });
    }
    db.check_query(query)?;
    let scored = c1
        .ids()
        .map(|id| {
            Ok((
                id.to_string(),
                cosine(&query.visual_embedding, &lookup(db, id)?.visual_embedding),
            ))
        })
        .collect::<Result<_, DistillError>>()?;
    Ok(CandidateSet {
        stage: 2,
        entries: rank(scored, false, k2),
    })
}

/// Stage-3 result plus candidates whose images could not be loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage3 {
    pub set: CandidateSet,
    /// `(record id, reason)` for every skipped candidate.
    pub skipped: Vec<(String, String)>,
    /// Images of the retained candidates, resized to the query, in rank order.
    pub images: Vec<ImageBuffer>,
}

/// The `k3` stage-2 candidates most structurally similar to the query image.
/// Candidate images are bilinearly resized to the query's size first.
pub fn stage3_structural(
    query_image: &ImageBuffer,
    c2: &CandidateSet,
    db: &Database,
    store: &dyn ImageStore,
    k3: usize,
) -> Result<Stage3, DistillError> {
    if k3 == 0 {
        return Err(DistillError::InvalidK { stage: 3 });
    }
    let params = SsimParams::default();
    let mut scored = Vec::with_capacity(c2.len());
    let mut skipped = Vec::new();
    let mut loaded = Vec::with_capacity(c2.len());
    for id in c2.ids() {
        let record = lookup(db, id)?;
        let image = match store.load(&record.image_path) {
            Ok(img) if img.channels() == query_image.channels() => img,
            Ok(img) => {
                skipped.push((
                    id.to_string(),
                    format!(
                        "{} channels, query has {}",
                        img.channels(),
                        query_image.channels()
                    ),
                ));
                continue;
            }
            Err(e) => {
                skipped.push((id.to_string(), e.to_string()));
                continue;
            }
        };
        let image = if image.shape() == query_image.shape() {
            image
        } else {
            image.resize_bilinear(query_image.height(), query_image.width())
        };
        scored.push((id.to_string(), ssim(query_image, &image, &params)?));
        loaded.push((id.to_string(), image));
    }
    let entries = rank(scored, false, k3);
    let images = entries
        .iter()
        .map(|(id, _)| {
            let pos = loaded
                .iter()
                .position(|(l, _)| l == id)
                .expect("ranked ids were loaded");
            loaded[pos].1.clone()
        })
        .collect();
    Ok(Stage3 {
        set: CandidateSet { stage: 3, entries },
        skipped,
        images,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub stage1: CandidateSet,
    pub stage2: CandidateSet,
    pub stage3: Stage3,
}

impl Retrieval {
    /// The final reference set.
    pub fn result(&self) -> &CandidateSet {
        &self.stage3.set
    }
}

/// Runs the three stages in sequence.
pub fn retrieve(
    query: &Record,
    query_image: &ImageBuffer,
    db: &Database,
    store: &dyn ImageStore,
    params: &RetrievalParams,
) -> Result<Retrieval, DistillError> {
    params.validate()?;
    let stage1 = stage1_semantic(query, db, params.k1)?;
    let stage2 = stage2_visual(query, &stage1, db, params.k2)?;
    let stage3 = stage3_structural(query_image, &stage2, db, store, params.k3)?;
    Ok(Retrieval {
        stage1,
        stage2,
        stage3,
    })
}

#[cfg(test)]
mod tests {
    use super::super::record::{MemoryImageStore, Tier};
    use super::*;
    use crate::imaging::synth_clean;

    fn rec(id: &str, c: Vec<f64>, v: Vec<f64>) -> Record {
        Record::new(id, c, v, format!("{id}.png"), Tier::RealReference)
    }

    fn small_db() -> Database {
        Database::new(vec![
            rec("a", vec![0.0, 0.0], vec![1.0, 0.0]),
            rec("b", vec![1.0, 0.0], vec![0.0, 1.0]),
            rec("c", vec![3.0, 4.0], vec![1.0, 1.0]),
            rec("d", vec![0.0, 1.0], vec![2.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn stage1_exact_match_first_and_ties_by_id() {
        let db = small_db();
        let q = rec("q", vec![0.0, 0.0], vec![1.0, 0.0]);
        let c1 = stage1_semantic(&q, &db, 10).unwrap();
        assert_eq!(
            c1.entries,
            vec![
                ("a".into(), 0.0),
                ("b".into(), 1.0),
                ("d".into(), 1.0),
                ("c".into(), 5.0)
            ]
        );
        assert_eq!(stage1_semantic(&q, &db, 2).unwrap().len(), 2);
        assert!(matches!(
            stage1_semantic(&q, &db, 0),
            Err(DistillError::InvalidK { stage: 1 })
        ));
        assert!(matches!(
            stage1_semantic(&q, &Database::default(), 1),
            Err(DistillError::EmptyDatabase)
        ));
    }

    #[test]
    fn stage2_cosine_scores() {
        let db = small_db();
        let q = rec("q", vec![0.0, 0.0], vec![1.0, 0.0]);
        let c1 = stage1_semantic(&q, &db, 4).unwrap();
        let c2 = stage2_visual(&q, &c1, &db, 4).unwrap();
        assert_eq!(c2.entries[0], ("a".into(), 1.0));
        assert_eq!(c2.entries[1], ("d".into(), 1.0));
        assert!((c2.entries[2].1 - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(c2.entries[3], ("b".into(), 0.0));
        let zero = rec("z", vec![0.0, 0.0], vec![0.0, 0.0]);
        assert!(matches!(
            stage2_visual(&zero, &c1, &db, 2),
            Err(DistillError::ZeroNorm(_))
        ));
    }

    #[test]
    fn stage3_identical_image_ranks_first_and_unreadable_is_reported() {
        let db = small_db();
        let q_img = synth_clean(1, 24);
        let mut store = MemoryImageStore::new();
        store.insert("a.png", synth_clean(2, 24));
        store.insert("b.png", q_img.clone());
        store.insert("d.png", synth_clean(3, 40));
        let q = rec("q", vec![0.0, 0.0], vec![1.0, 0.0]);
        let c2 = stage2_visual(&q, &stage1_semantic(&q, &db, 4).unwrap(), &db, 4).unwrap();
        let s3 = stage3_structural(&q_img, &c2, &db, &store, 4).unwrap();
        assert_eq!(s3.set.entries[0], ("b".into(), 1.0));
        assert_eq!(s3.set.len(), 3);
        assert_eq!(s3.skipped.len(), 1);
        assert_eq!(s3.skipped[0].0, "c");
        assert_eq!(s3.images.len(), 3);
        assert!(s3.images.iter().all(|i| i.shape() == q_img.shape()));
    }
}
