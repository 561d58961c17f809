use std::collections::VecDeque;

use super::ReweightError;

/// Least-squares line through a window of `(index, loss)` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeEstimate {
    /// Loss change per observation step. Negative means the loss is falling.
    pub alpha: f64,
    pub beta: f64,
}

/// Ordinary least-squares fit of `y = alpha * k + beta`.
///
/// The sums are taken about the means of `k` and `y`, which keeps the fit exact
/// on linear data even for large observation indices.
pub fn estimate_slope(entries: &[(f64, f64)]) -> Result<SlopeEstimate, ReweightError> {
    if entries.len() < 2 {
        return Err(ReweightError::TooFewPoints(entries.len()));
    }
    let n = entries.len() as f64;
    let k_mean = entries.iter().map(|e| e.0).sum::<f64>() / n;
    let y_mean = entries.iter().map(|e| e.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(k, y) in entries {
        let dk = k - k_mean;
        sxy += dk * (y - y_mean);
        sxx += dk * dk;
    }
    if sxx == 0.0 {
        return Err(ReweightError::DegenerateIndices);
    }
    let alpha = sxy / sxx;
    Ok(SlopeEstimate {
        alpha,
        beta: y_mean - alpha * k_mean,
    })
}

/// Bounded history of one degradation type's normalized losses and slopes.
#[derive(Debug, Clone)]
pub struct TypeLossWindow {
    type_id: usize,
    capacity: usize,
    raw_baseline: Option<f64>,
    observations: u64,
    entries: VecDeque<(u64, f64)>,
    slope_history: VecDeque<(u64, f64)>,
}

impl TypeLossWindow {
    pub fn new(type_id: usize, capacity: usize) -> Self {
        Self {
            type_id,
            capacity,
            raw_baseline: None,
            observations: 0,
            entries: VecDeque::with_capacity(capacity),
            slope_history: VecDeque::with_capacity(capacity),
        }
    }

    pub fn type_id(&self) -> usize {
        self.type_id
    }

    /// First raw loss observed for this type, once there is one.
    pub fn raw_baseline(&self) -> Option<f64> {
        self.raw_baseline
    }

    /// Total observations ever pushed, including ones trimmed from the window.
    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = (u64, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn slope_history(&self) -> impl ExactSizeIterator<Item = (u64, f64)> + '_ {
        self.slope_history.iter().copied()
    }

    pub fn last_index(&self) -> Option<u64> {
        self.entries.back().map(|e| e.0)
    }

    pub fn last_normalized(&self) -> Option<f64> {
        self.entries.back().map(|e| e.1)
    }

    /// Normalizes `raw_loss` by the type's first observed loss and appends it.
    pub fn push_raw(&mut self, index: u64, raw_loss: f64) -> Result<f64, ReweightError> {
        if !(raw_loss.is_finite() && raw_loss > 0.0) {
            return Err(ReweightError::InvalidLoss {
                type_id: self.type_id,
                step: index,
                value: raw_loss,
            });
        }
        self.check_index(index)?;
        let baseline = *self.raw_baseline.get_or_insert(raw_loss);
        let normalized = raw_loss / baseline;
        self.append(index, normalized);
        Ok(normalized)
    }

    /// Repeats the last normalized loss at `index`. Returns `None` if the type
    /// has never been observed.
    pub fn carry_forward(&mut self, index: u64) -> Result<Option<f64>, ReweightError> {
        let Some(last) = self.last_normalized() else {
            return Ok(None);
        };
        self.check_index(index)?;
        self.append(index, last);
        Ok(Some(last))
    }

    /// Fits the current window.
    pub fn slope(&self) -> Result<SlopeEstimate, ReweightError> {
        let points: Vec<(f64, f64)> = self.entries.iter().map(|&(k, y)| (k as f64, y)).collect();
        estimate_slope(&points)
    }

    pub fn record_slope(&mut self, index: u64, alpha: f64) {
        if self.slope_history.len() == self.capacity {
            self.slope_history.pop_front();
        }
        self.slope_history.push_back((index, alpha));
    }

    fn check_index(&self, index: u64) -> Result<(), ReweightError> {
        match self.last_index() {
            Some(last) if index <= last => Err(ReweightError::NonIncreasingIndex {
                type_id: self.type_id,
                last,
                index,
            }),
            _ => Ok(()),
        }
    }

    fn append(&mut self, index: u64, normalized: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((index, normalized));
        self.observations += 1;
    }
}
