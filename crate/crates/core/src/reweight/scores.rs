use crate::numeric::{scaled_last_softmax, softmax};

use super::ReweightError;

/// Type balance score: softmax over `K * alpha_i / sum_j |alpha_j|`.
///
/// Slower-converging types (larger, i.e. less negative, slopes) get larger
/// scores. All-zero slopes give the uniform vector.
pub fn compute_tbs(alphas: &[f64]) -> Vec<f64> {
    let k = alphas.len() as f64;
    let scale: f64 = alphas.iter().map(|a| a.abs()).sum();
    if scale == 0.0 {
        return softmax(&vec![0.0; alphas.len()]);
    }
    let logits: Vec<f64> = alphas.iter().map(|a| k * a / scale).collect();
    softmax(&logits)
}

/// Type stability score: softmax over `-N * alpha_i(t) / sum_h |alpha_i(h)|`,
/// where each type's slope is normalized by its own recent slope history.
///
/// `histories[i]` is expected to hold the last up-to-`window_size` slopes of
/// type `i`, including the current one. A history that sums to zero scores 0.
pub fn compute_tss(
    window_size: usize,
    current_alphas: &[f64],
    histories: &[Vec<f64>],
) -> Result<Vec<f64>, ReweightError> {
    if current_alphas.len() != histories.len() {
        return Err(ReweightError::LengthMismatch {
            expected: current_alphas.len(),
            actual: histories.len(),
        });
    }
    let n = window_size as f64;
    let logits: Vec<f64> = current_alphas
        .iter()
        .zip(histories)
        .map(|(&alpha, history)| {
            let scale: f64 = history.iter().map(|a| a.abs()).sum();
            if scale == 0.0 {
                0.0
            } else {
                -n * alpha / scale
            }
        })
        .collect();
    Ok(softmax(&logits))
}

/// Running state of the adaptivity factor.
///
/// Each slope-bearing step appends the temporal score
/// `z_t = -tau * t * alpha_max(t) / sum_{i<=t} |alpha_max(i)|` and the factor is
/// `min(t * softmax(z_1..z_t)[t], 1)`. It stays at 1 while the scores hold steady
/// and drops when the largest slope turns upward.
#[derive(Debug, Clone)]
pub struct AdaptivityFactor {
    tau: f64,
    scores: Vec<f64>,
    abs_alpha_max_sum: f64,
}

impl AdaptivityFactor {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            scores: Vec::new(),
            abs_alpha_max_sum: 0.0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Temporal scores recorded so far, one per slope-bearing step.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Records this step's largest slope and returns the factor for it.
    pub fn update(&mut self, alpha_max: f64) -> f64 {
        self.abs_alpha_max_sum += alpha_max.abs();
        let t = (self.scores.len() + 1) as f64;
        if self.abs_alpha_max_sum == 0.0 {
            self.scores.push(0.0);
            return 1.0;
        }
        self.scores
            .push(-self.tau * t * alpha_max / self.abs_alpha_max_sum);
        scaled_last_softmax(&self.scores).min(1.0)
    }
}

/// `af * tbs + (1 - af) * tss`, componentwise.
pub fn compute_weights(tbs: &[f64], tss: &[f64], af: f64) -> Result<Vec<f64>, ReweightError> {
    if tbs.len() != tss.len() {
        return Err(ReweightError::LengthMismatch {
            expected: tbs.len(),
            actual: tss.len(),
        });
    }
    if !(0.0..=1.0).contains(&af) {
        return Err(ReweightError::InvalidAdaptivity(af));
    }
    // endpoints are returned verbatim; in between, equal components stay equal
    if af == 1.0 {
        return Ok(tbs.to_vec());
    }
    if af == 0.0 {
        return Ok(tss.to_vec());
    }
    Ok(tbs.iter().zip(tss).map(|(b, s)| s + af * (b - s)).collect())
}

/// Total training loss `K * sum_i w_i * L_i`. Uniform weights give the plain sum.
pub fn combine_loss(losses: &[f64], weights: &[f64]) -> Result<f64, ReweightError> {
    if losses.len() != weights.len() {
        return Err(ReweightError::LengthMismatch {
            expected: weights.len(),
            actual: losses.len(),
        });
    }
    let k = losses.len() as f64;
    Ok(k * losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn tbs_equal_slopes_is_uniform() {
        assert_eq!(compute_tbs(&[-0.1; 4]), vec![0.25; 4]);
        assert_eq!(compute_tbs(&[-3.0, -3.0]), vec![0.5, 0.5]);
        assert_eq!(compute_tbs(&[0.0; 3]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn tbs_four_types() {
        // softmax(4 * alpha / 0.65), computed by an independent script
        let w = compute_tbs(&[-0.30, -0.20, -0.10, -0.05]);
        let expected = [
            0.091_477_499_640_602_12,
            0.169_267_051_115_154_2,
            0.313_206_359_003_972_87,
            0.426_049_090_240_270_8,
        ];
        assert!(close(&w, &expected, 1e-12), "{w:?}");
    }

    #[test]
    fn tss_penalizes_divergence() {
        let hist_a = vec![-0.1; 10];
        let hist_b = vec![0.1; 10];
        let w = compute_tss(10, &[-0.1, 0.1], &[hist_a, hist_b]).unwrap();
        let expected = [0.880_797_077_977_882_3, 0.119_202_922_022_117_55];
        assert!(close(&w, &expected, 1e-12), "{w:?}");
    }

    #[test]
    fn tss_single_entry_histories_are_uniform() {
        let w = compute_tss(10, &[-0.2, -0.2], &[vec![-0.2], vec![-0.2]]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn tss_zero_history_scores_zero() {
        let w = compute_tss(10, &[0.0, 0.0], &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn af_singleton_is_one() {
        let mut af = AdaptivityFactor::new(5.0);
        assert_eq!(af.update(-0.3), 1.0);
    }

    #[test]
    fn af_steady_state_is_exactly_one() {
        let mut af = AdaptivityFactor::new(5.0);
        for _ in 0..40 {
            assert_eq!(af.update(-0.25), 1.0);
        }
        assert!(af.scores().iter().all(|&z| z == 5.0));
    }

    #[test]
    fn af_zero_slopes_is_one() {
        let mut af = AdaptivityFactor::new(5.0);
        assert_eq!(af.update(0.0), 1.0);
        assert_eq!(af.update(0.0), 1.0);
    }

    #[test]
    fn af_drops_after_divergence() {
        // Oracle values from a direct evaluation of the temporal softmax:
        // step 20 ~ 1.0, step 25 ~ 5.6749e-5.
        let mut af = AdaptivityFactor::new(5.0);
        let mut trace = Vec::new();
        for _ in 0..20 {
            trace.push(af.update(-0.1));
        }
        for _ in 0..5 {
            trace.push(af.update(0.1));
        }
        assert!((trace[19] - 1.0).abs() < 1e-12);
        assert!(trace[24] < 1.0 && trace[24] < trace[19]);
        assert!((trace[24] - 5.674_926_809_990_968_6e-5).abs() < 1e-15);
    }

    #[test]
    fn weights_endpoints_and_midpoint() {
        let tbs = [0.8, 0.2];
        let tss = [0.2, 0.8];
        assert_eq!(compute_weights(&tbs, &tss, 1.0).unwrap(), tbs.to_vec());
        assert_eq!(compute_weights(&tbs, &tss, 0.0).unwrap(), tss.to_vec());
        assert!(close(
            &compute_weights(&tbs, &tss, 0.5).unwrap(),
            &[0.5, 0.5],
            1e-15
        ));
        assert!(compute_weights(&tbs, &[1.0], 0.5).is_err());
        assert!(compute_weights(&tbs, &tss, 1.5).is_err());
    }

    #[test]
    fn combine_loss_examples() {
        assert_eq!(
            combine_loss(&[1.0, 2.0, 3.0, 4.0], &[0.25; 4]).unwrap(),
            10.0
        );
        assert_eq!(combine_loss(&[3.0, 7.0], &[1.0, 0.0]).unwrap(), 6.0);
        assert_eq!(combine_loss(&[4.0, 8.0], &[0.25, 0.75]).unwrap(), 14.0);
        assert!(combine_loss(&[1.0], &[0.5, 0.5]).is_err());
    }
}
