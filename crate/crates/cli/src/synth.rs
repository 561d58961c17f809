//! Synthetic retrieval corpus for `distill`: degraded reference scenes with
//! embeddings, and candidate queries that either re-render a reference scene
//! or show an unrelated one.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mixrain::distill::{write_embedding, write_manifest, ManifestEntry, Tier};
use mixrain::imaging::{degrade, synth_clean, DegradationKind, DegradationSpec, ImageBuffer};
use mixrain::seed::mix;

use crate::config::SynthConfig;

pub const RETRIEVAL_DIR: &str = "retrieval";
pub const REFERENCES_FILE: &str = "references.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalCorpus {
    pub references: usize,
    pub queries: usize,
    /// Queries rendered from their source scene.
    pub faithful: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn jitter(v: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    v.iter()
        .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

struct Scene {
    kind: DegradationKind,
    clean_seed: u64,
    caption: Vec<f64>,
    visual: Vec<f64>,
}

/// Writes `retrieval/` under `out` and returns what it contains.
pub fn write_retrieval_corpus(cfg: &SynthConfig, seed: u64, out: &Path) -> Result<RetrievalCorpus> {
    let root = out.join(RETRIEVAL_DIR);
    for sub in ["emb", "img"] {
        fs::create_dir_all(root.join(sub))
            .with_context(|| format!("creating {}", root.join(sub).display()))?;
    }
    let scenes: Vec<Scene> = (0..cfg.references)
        .map(|r| {
            let s = mix(seed, r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            Scene {
                kind: DegradationKind::ALL[r % 4],
                clean_seed: s,
                caption: gaussian(&mut rng, cfg.embedding_dim),
                visual: gaussian(&mut rng, cfg.embedding_dim),
            }
        })
        .collect();

    let emit = |id: String, caption: &[f64], visual: &[f64], tier: Tier, image: ImageBuffer| {
        let cap = format!("emb/{id}.cap.emb");
        let vis = format!("emb/{id}.vis.emb");
        let img = format!("img/{id}.png");
        write_embedding(&root.join(&cap), caption)?;
        write_embedding(&root.join(&vis), visual)?;
        image.save_png(&root.join(&img))?;
        anyhow::Ok(ManifestEntry {
            caption: format!("{} rain", tier_word(tier)),
            id,
            caption_embedding_path: cap,
            visual_embedding_path: vis,
            image_path: img,
            tier: Some(tier),
        })
    };

    let mut refs = Vec::with_capacity(scenes.len());
    for (r, sc) in scenes.iter().enumerate() {
        let clean = synth_clean(sc.clean_seed, cfg.size);
        let spec = DegradationSpec {
            kind: sc.kind,
            intensity: 0.6,
            seed: sc.clean_seed,
        };
        refs.push(emit(
            format!("ref{r:05}"),
            &sc.caption,
            &sc.visual,
            Tier::RealReference,
            degrade(&clean, &spec),
        )?);
    }

    let mut queries = Vec::with_capacity(cfg.queries);
    let mut faithful = 0;
    for j in 0..cfg.queries {
        let q = mix(seed, (cfg.references + j) as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(q);
        let sc = &scenes[rng.random_range(0..scenes.len())];
        let (image, caption, visual) = if rng.random_bool(0.5) {
            faithful += 1;
            let spec = DegradationSpec {
                kind: sc.kind,
                intensity: rng.random_range(0.4..0.8),
                seed: q,
            };
            let img = degrade(&synth_clean(sc.clean_seed, cfg.size), &spec);
            (
                img,
                jitter(&sc.caption, &mut rng, 0.1),
                jitter(&sc.visual, &mut rng, 0.1),
            )
        } else {
            let spec = DegradationSpec {
                kind: DegradationKind::ALL[rng.random_range(0..4)],
                intensity: 1.0,
                seed: q,
            };
            let img = degrade(&synth_clean(q, cfg.size), &spec);
            (
                img,
                jitter(&sc.caption, &mut rng, 0.5),
                jitter(&sc.visual, &mut rng, 0.5),
            )
        };
        queries.push(emit(
            format!("q{j:05}"),
            &caption,
            &visual,
            Tier::Candidate,
            image,
        )?);
    }

    write_manifest(&root.join(REFERENCES_FILE), &refs)?;
    write_manifest(&root.join(QUERIES_FILE), &queries)?;
    Ok(RetrievalCorpus {
        references: refs.len(),
        queries: queries.len(),
        faithful,
    })
}

fn tier_word(tier: Tier) -> &'static str {
    match tier {
        Tier::RealReference => "real",
        Tier::Candidate => "generated",
    }
}
