//! Small numeric helpers shared across modules.

/// Numerically stable softmax.
///
/// Exactly equal inputs produce exactly equal outputs, and an all-equal input
/// yields `1/n` per component.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `n / sum(exp(z - max)) * exp(z_last - max)`, i.e. `n * softmax(z)[n-1]`,
/// evaluated so that an all-equal history gives exactly 1.
pub(crate) fn scaled_last_softmax(logits: &[f64]) -> f64 {
    let n = logits.len();
    assert!(n > 0, "scaled_last_softmax of an empty history");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let last = (logits[n - 1] - max).exp();
    (n as f64 * last) / total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 4]);
        assert!(p.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0]);
        assert!((p[0] - 0.731_058_578_630_004_8).abs() < 1e-12);
    }

    #[test]
    fn scaled_last_is_exact_for_equal_scores() {
        for n in 1..50 {
            assert_eq!(scaled_last_softmax(&vec![3.7; n]), 1.0);
        }
    }
}
