use mixrain::distill::{
    retrieve, stage1_semantic, Database, MemoryImageStore, Record, RetrievalParams, Tier,
};
use mixrain::imaging::{ssim, synth_clean, ImageBuffer, SsimParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Corpus {
    db: Database,
    store: MemoryImageStore,
    images: Vec<ImageBuffer>,
}

fn corpus(seed: u64, n: usize, dim: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = MemoryImageStore::new();
    let mut images = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        // a few duplicated embeddings force ties
        let base = if i > 0 && rng.random_bool(0.1) {
            rng.random_range(0..i)
        } else {
            i
        };
        let mut erng = ChaCha8Rng::seed_from_u64(seed ^ (base as u64 * 7919));
        let caption: Vec<f64> = (0..dim).map(|_| erng.random::<f64>() * 2.0 - 1.0).collect();
        let visual: Vec<f64> = (0..dim)
            .map(|_| erng.random::<f64>() * 2.0 - 1.0 + 1e-3)
            .collect();
        let img = synth_clean(seed * 1000 + i as u64, 12);
        let path = format!("img/{i:04}.png");
        store.insert(path.clone(), img.clone());
        images.push(img);
        records.push(Record::new(
            format!("r{i:04}"),
            caption,
            visual,
            path,
            Tier::RealReference,
        ));
    }
    Corpus {
        db: Database::new(records).unwrap(),
        store,
        images,
    }
}

/// Picks the best remaining entry `k` times; `better(a, b)` says a outranks b.
fn select(
    mut pool: Vec<(String, f64)>,
    k: usize,
    better: impl Fn(&(String, f64), &(String, f64)) -> bool,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    while out.len() < k && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[best]) {
                best = i;
            }
        }
        out.push(pool.swap_remove(best));
    }
    out
}

fn lower_first(a: &(String, f64), b: &(String, f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

fn higher_first(a: &(String, f64), b: &(String, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

fn brute_force(
    c: &Corpus,
    q: &Record,
    q_img: &ImageBuffer,
    p: &RetrievalParams,
) -> Vec<(String, f64)> {
    let recs = c.db.records();
    let dist = |r: &Record| {
        let s: f64 = q
            .caption_embedding
            .iter()
            .zip(&r.caption_embedding)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        s.sqrt()
    };
    let s1 = select(
        recs.iter().map(|r| (r.id.clone(), dist(r))).collect(),
        p.k1,
        lower_first,
    );
    let cos = |r: &Record| {
        let dot: f64 = q
            .visual_embedding
            .iter()
            .zip(&r.visual_embedding)
            .map(|(a, b)| a * b)
            .sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (n(&q.visual_embedding) * n(&r.visual_embedding))
    };
    let s2 = select(
        s1.iter()
            .map(|(id, _)| (id.clone(), cos(c.db.get(id).unwrap())))
            .collect(),
        p.k2,
        higher_first,
    );
    let index = |id: &str| id[1..].parse::<usize>().unwrap();
    let params = SsimParams::default();
    let s3 = s2
        .iter()
        .map(|(id, _)| {
            (
                id.clone(),
                ssim(q_img, &c.images[index(id)], &params).unwrap(),
            )
        })
        .collect();
    select(s3, p.k3, higher_first)
}

fn random_query(rng: &mut ChaCha8Rng, c: &Corpus, dim: usize) -> (Record, ImageBuffer) {
    if rng.random_bool(0.3) {
        let i = rng.random_range(0..c.db.len());
        let r = c.db.records()[i].clone();
        return (
            Record {
                id: "query".into(),
                tier: Tier::Candidate,
                ..r
            },
            c.images[i].clone(),
        );
    }
    let caption = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let visual = (0..dim)
        .map(|_| rng.random::<f64>() * 2.0 - 1.0 + 1e-3)
        .collect();
    let img = synth_clean(rng.random(), 12);
    (
        Record::new("query", caption, visual, "query.png", Tier::Candidate),
        img,
    )
}

#[test]
fn cascade_matches_sequential_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for corpus_seed in 0..20u64 {
        let n = rng.random_range(1..=500);
        let dim = rng.random_range(2..=16);
        let c = corpus(corpus_seed + 1, n, dim);
        let p = RetrievalParams {
            k1: rng.random_range(1..=60),
            k2: rng.random_range(1..=25),
            k3: rng.random_range(1..=8),
        };
        for _ in 0..3 {
            let (q, q_img) = random_query(&mut rng, &c, dim);
            let got = retrieve(&q, &q_img, &c.db, &c.store, &p).unwrap();
            assert_eq!(
                got.result().entries,
                brute_force(&c, &q, &q_img, &p),
                "corpus {corpus_seed} {p:?}"
            );
        }
    }
}

#[test]
fn twenty_records_k1_five_matches_full_sort() {
    let c = corpus(3, 20, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (q, _) = random_query(&mut rng, &c, 8);
    let got = stage1_semantic(&q, &c.db, 5).unwrap();
    let mut all: Vec<(String, f64)> =
        c.db.records()
            .iter()
            .map(|r| {
                let d: f64 = q
                    .caption_embedding
                    .iter()
                    .zip(&r.caption_embedding)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (r.id.clone(), d.sqrt())
            })
            .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(5);
    assert_eq!(got.entries, all);
}

#[test]
fn identical_query_is_sole_winner() {
    let c = corpus(9, 40, 6);
    let r = c.db.records()[17].clone();
    let q = Record {
        id: "q".into(),
        ..r.clone()
    };
    let p = RetrievalParams {
        k1: 1,
        k2: 1,
        k3: 1,
    };
    let got = retrieve(&q, &c.images[17], &c.db, &c.store, &p).unwrap();
    assert_eq!(got.result().entries, vec![(r.id, 1.0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn containment_and_score_order(seed in 0u64..1000, n in 1usize..60, k1 in 1usize..30, k2 in 1usize..20, k3 in 1usize..10) {
        let c = corpus(seed, n, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, q_img) = random_query(&mut rng, &c, 4);
        let got = retrieve(&q, &q_img, &c.db, &c.store, &RetrievalParams { k1, k2, k3 }).unwrap();
        let (s1, s2, s3) = (&got.stage1, &got.stage2, &got.stage3.set);
        prop_assert!(s1.len() <= k1 && s2.len() <= k2 && s3.len() <= k3);
        prop_assert!(s2.ids().all(|id| s1.ids().any(|x| x == id)));
        prop_assert!(s3.ids().all(|id| s2.ids().any(|x| x == id)));
        prop_assert!(s1.scores().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(s2.scores().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s3.scores().windows(2).all(|w| w[0] >= w[1]));
    }
}
