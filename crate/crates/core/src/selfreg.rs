//! Self-regulated sample selection.
//!
//! A sample takes part in an update when the student misclassifies it, or
//! classifies it correctly with a top-two probability margin below an
//! epoch-dependent threshold `1 - exp(-alpha * n)`.

use crate::error::{invalid, Result};

/// Difference between the largest and second-largest probabilities.
pub fn margin_delta(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(invalid(format!(
            "margin needs at least 2 classes, got {}",
            probs.len()
        )));
    }
    Ok(margin_unchecked(probs))
}

pub(crate) fn margin_unchecked(probs: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    first - second
}

/// Inclusion threshold for 0-based epoch `n`.
pub fn threshold(epoch: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(-(-alpha * epoch as f64).exp_m1())
}

/// Gate: misclassified, or correct with margin below the threshold.
pub fn include_sample(predicted: usize, truth: usize, delta: f64, eta: f64) -> bool {
    predicted != truth || delta < eta
}

/// Usage counters for one self-regulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationState {
    pub alpha: f64,
    pub epoch: u64,
    used: u64,
    presented: u64,
}

impl RegulationState {
    pub fn new(alpha: f64) -> Result<Self> {
        threshold(0, alpha)?;
        Ok(Self {
            alpha,
            epoch: 0,
            used: 0,
            presented: 0,
        })
    }

    /// Threshold for the current epoch.
    pub fn eta(&self) -> f64 {
        threshold(self.epoch, self.alpha).expect("alpha validated at construction")
    }

    pub fn record_usage(&mut self, included: bool) {
        self.presented += 1;
        if included {
            self.used += 1;
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn presented(&self) -> u64 {
        self.presented
    }

    /// Rebuilds counters from stored values.
    pub fn from_counts(alpha: f64, epoch: u64, used: u64, presented: u64) -> Result<Self> {
        if used > presented {
            return Err(invalid(format!("{used} used of only {presented} presented")));
        }
        let mut s = Self::new(alpha)?;
        s.epoch = epoch;
        s.used = used;
        s.presented = presented;
        Ok(s)
    }
}
