//! Temperature softmax and cross-entropy over probability vectors.

use crate::error::{invalid, shape, Result};

/// Floor applied to predicted probabilities before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`Distribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates that `probs` lies on the simplex.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub(crate) fn from_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("probability {v} outside [0, 1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Writes `softmax(logits / tau)` into `out` using max-subtraction.
///
/// Callers must ensure `tau > 0` and matching lengths.
pub fn softmax_t_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Temperature softmax of a logit vector.
pub fn softmax_t(logits: &[f64], tau: f64) -> Result<Distribution> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    if logits.len() < 2 {
        return Err(invalid(format!(
            "softmax needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(invalid("non-finite logit"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_t_into(logits, tau, &mut out);
    Ok(Distribution(out))
}

/// `-sum target_i * ln(max(predicted_i, LOG_FLOOR))` without validation.
pub fn cross_entropy_raw(target: &[f64], predicted: &[f64]) -> f64 {
    target
        .iter()
        .zip(predicted)
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &q)| -t * q.max(LOG_FLOOR).ln())
        .sum()
}

/// Cross-entropy of `predicted` measured against the `target` distribution.
pub fn cross_entropy(target: &Distribution, predicted: &Distribution) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(shape(format!(
            "cross entropy of length {} against {}",
            target.len(),
            predicted.len()
        )));
    }
    Ok(cross_entropy_raw(&target.0, &predicted.0))
}

/// Shannon entropy in nats; `0 ln 0` is taken as 0.
pub fn entropy(p: &Distribution) -> f64 {
    p.0.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}
