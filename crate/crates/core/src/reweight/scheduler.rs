use serde::{Deserialize, Serialize};

use super::scores::{compute_tbs, compute_tss, compute_weights, AdaptivityFactor};
use super::window::TypeLossWindow;
use super::ReweightError;

/// Window size used when none is configured.
pub const DEFAULT_WINDOW_SIZE: usize = 10;
/// Sensitivity of the adaptivity factor used when none is configured.
pub const DEFAULT_TAU: f64 = 5.0;
pub const DEFAULT_WARMUP_MIN_POINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub num_types: usize,
    pub window_size: usize,
    pub tau: f64,
    pub warmup_min_points: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            num_types: 4,
            window_size: DEFAULT_WINDOW_SIZE,
            tau: DEFAULT_TAU,
            warmup_min_points: DEFAULT_WARMUP_MIN_POINTS,
        }
    }
}

impl SchedulerConfig {
    pub fn new(num_types: usize) -> Self {
        Self {
            num_types,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ReweightError> {
        if self.num_types == 0 {
            return Err(ReweightError::InvalidConfig(
                "num_types must be at least 1".into(),
            ));
        }
        if self.window_size < 2 {
            return Err(ReweightError::InvalidConfig(format!(
                "window_size must be at least 2, got {}",
                self.window_size
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(ReweightError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.warmup_min_points == 0 {
            return Err(ReweightError::InvalidConfig(
                "warmup_min_points must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-type weights emitted at one step. Components lie on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub step: u64,
}

impl WeightVector {
    pub fn uniform(k: usize, step: u64) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
            step,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Everything the scheduler computed at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub weights: WeightVector,
    pub tbs: Vec<f64>,
    pub tss: Vec<f64>,
    pub af: f64,
    /// Current slope per type; empty during warm-up.
    pub alphas: Vec<f64>,
    pub warming_up: bool,
}

/// Sequential state machine producing per-type loss weights.
///
/// Feed it one vector of raw per-type losses per training step with
/// [`Scheduler::step`]; it normalizes each stream by its first value, fits a
/// slope over the last `window_size` observations, and blends the balance and
/// stability scores with the adaptivity factor.
#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    windows: Vec<TypeLossWindow>,
    adaptivity: AdaptivityFactor,
    step: u64,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self, ReweightError> {
        config.validate()?;
        let windows = (0..config.num_types)
            .map(|i| TypeLossWindow::new(i, config.window_size))
            .collect();
        Ok(Self {
            adaptivity: AdaptivityFactor::new(config.tau),
            windows,
            config,
            step: 0,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn num_types(&self) -> usize {
        self.config.num_types
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn windows(&self) -> &[TypeLossWindow] {
        &self.windows
    }

    /// Temporal scores behind the adaptivity factor, one per slope-bearing step.
    pub fn af_score_history(&self) -> &[f64] {
        self.adaptivity.scores()
    }

    /// Appends one observation for a single type, outside of [`Scheduler::step`].
    /// The observation index continues that type's own sequence.
    pub fn push_loss(&mut self, type_id: usize, raw_loss: f64) -> Result<f64, ReweightError> {
        let window = self.window_mut(type_id)?;
        let index = window.last_index().map_or(1, |i| i + 1);
        window.push_raw(index, raw_loss)
    }

    /// One training step with every type observed.
    pub fn step(&mut self, raw_losses: &[f64]) -> Result<StepOutcome, ReweightError> {
        let observed: Vec<Option<f64>> = raw_losses.iter().copied().map(Some).collect();
        self.step_partial(&observed)
    }

    /// One training step where some types may be missing. A missing type repeats
    /// its last normalized loss so all windows stay aligned on the step index.
    pub fn step_partial(
        &mut self,
        raw_losses: &[Option<f64>],
    ) -> Result<StepOutcome, ReweightError> {
        let k = self.config.num_types;
        if raw_losses.len() != k {
            return Err(ReweightError::LengthMismatch {
                expected: k,
                actual: raw_losses.len(),
            });
        }
        let t = self.step + 1;
        // validate everything before touching state
        for (type_id, loss) in raw_losses.iter().enumerate() {
            if let Some(v) = *loss {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ReweightError::InvalidLoss {
                        type_id,
                        step: t,
                        value: v,
                    });
                }
            }
        }
        for (window, loss) in self.windows.iter_mut().zip(raw_losses) {
            match *loss {
                Some(v) => {
                    window.push_raw(t, v)?;
                }
                None => {
                    window.carry_forward(t)?;
                }
            }
        }
        self.step = t;

        let warmup = self.config.warmup_min_points.max(2) as u64;
        if self.windows.iter().any(|w| w.observations() < warmup) {
            let uniform = WeightVector::uniform(k, t);
            return Ok(StepOutcome {
                tbs: uniform.weights.clone(),
                tss: uniform.weights.clone(),
                weights: uniform,
                af: 1.0,
                alphas: Vec::new(),
                warming_up: true,
            });
        }

        let mut alphas = Vec::with_capacity(k);
        for window in &mut self.windows {
            let alpha = window.slope()?.alpha;
            window.record_slope(t, alpha);
            alphas.push(alpha);
        }
        let histories: Vec<Vec<f64>> = self
            .windows
            .iter()
            .map(|w| w.slope_history().map(|(_, a)| a).collect())
            .collect();
        let alpha_max = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let tbs = compute_tbs(&alphas);
        let tss = compute_tss(self.config.window_size, &alphas, &histories)?;
        let af = self.adaptivity.update(alpha_max);
        let weights = compute_weights(&tbs, &tss, af)?;
        Ok(StepOutcome {
            weights: WeightVector { weights, step: t },
            tbs,
            tss,
            af,
            alphas,
            warming_up: false,
        })
    }

    fn window_mut(&mut self, type_id: usize) -> Result<&mut TypeLossWindow, ReweightError> {
        let num_types = self.config.num_types;
        self.windows
            .get_mut(type_id)
            .ok_or(ReweightError::UnknownType { type_id, num_types })
    }
}
