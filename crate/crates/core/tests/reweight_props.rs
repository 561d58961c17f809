use mixrain::reweight::{
    compute_tbs, compute_tss, compute_weights, estimate_slope, Scheduler, SchedulerConfig,
};
use proptest::prelude::*;

/// Positive loss streams built from a random walk in log space.
fn streams(max_k: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_k, 2..=max_len).prop_flat_map(|(k, len)| {
        prop::collection::vec(
            (0.01f64..10.0, prop::collection::vec(-0.2f64..0.15, len - 1)).prop_map(
                |(start, steps)| {
                    let mut v = vec![start];
                    for s in steps {
                        let next = v.last().unwrap() * s.exp();
                        v.push(next);
                    }
                    v
                },
            ),
            k,
        )
    })
}

fn run(streams: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = streams.len();
    let mut s = Scheduler::new(SchedulerConfig::new(k)).unwrap();
    (0..streams[0].len())
        .map(|t| {
            let losses: Vec<f64> = streams.iter().map(|st| st[t]).collect();
            s.step(&losses).unwrap().weights.weights
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_stay_on_the_simplex(st in streams(8, 120)) {
        for w in run(&st) {
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn permuting_types_permutes_weights(st in streams(5, 60), rot in 1usize..5) {
        let k = st.len();
        let rot = rot % k;
        let mut rotated = st.clone();
        rotated.rotate_left(rot);
        for (a, b) in run(&st).iter().zip(run(&rotated)) {
            for i in 0..k {
                prop_assert!((a[(i + rot) % k] - b[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rescaling_a_stream_changes_nothing(st in streams(4, 60), c in 0.001f64..1000.0, which in 0usize..4) {
        let mut scaled = st.clone();
        let which = which % st.len();
        for v in &mut scaled[which] {
            *v *= c;
        }
        for (a, b) in run(&st).iter().zip(run(&scaled)) {
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn tbs_is_monotone_in_slope(alphas in prop::collection::vec(-1.0f64..1.0, 2..8)) {
        let tbs = compute_tbs(&alphas);
        for i in 0..alphas.len() {
            for j in 0..alphas.len() {
                if alphas[i] > alphas[j] {
                    prop_assert!(tbs[i] > tbs[j]);
                }
            }
        }
    }

    #[test]
    fn raising_a_slope_lowers_its_stability_share(
        alphas in prop::collection::vec(-1.0f64..-0.01, 2..6),
        which in 0usize..6,
        bump in 0.05f64..2.0,
    ) {
        let which = which % alphas.len();
        let histories: Vec<Vec<f64>> = alphas.iter().map(|&a| vec![a, a * 0.5, -0.3]).collect();
        let before = compute_tss(10, &alphas, &histories).unwrap();
        let mut raised = alphas.clone();
        raised[which] += bump;
        let mut raised_hist = histories.clone();
        raised_hist[which][0] = raised[which];
        let after = compute_tss(10, &raised, &raised_hist).unwrap();
        prop_assert!(after[which] < before[which]);
    }

    #[test]
    fn blend_lies_between_its_parts(
        a in prop::collection::vec(-1.0f64..1.0, 2..8),
        b_seed in prop::collection::vec(-1.0f64..1.0, 8),
        af in 0.0f64..=1.0,
    ) {
        let tbs = compute_tbs(&a);
        let tss = compute_tbs(&b_seed[..a.len()]);
        let w = compute_weights(&tbs, &tss, af).unwrap();
        for i in 0..w.len() {
            let lo = tbs[i].min(tss[i]);
            let hi = tbs[i].max(tss[i]);
            prop_assert!(w[i] >= lo - 1e-15 && w[i] <= hi + 1e-15);
        }
    }

    #[test]
    fn slope_of_exact_line(alpha in -5.0f64..5.0, beta in -5.0f64..5.0, start in 0u64..500, n in 2usize..40) {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = (start + i as u64) as f64;
                (x, alpha * x + beta)
            })
            .collect();
        let fit = estimate_slope(&pts).unwrap();
        prop_assert!((fit.alpha - alpha).abs() <= 1e-10);
        prop_assert!((fit.beta - beta).abs() <= 1e-10);
    }
}
