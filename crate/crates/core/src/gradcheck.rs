//! Central finite-difference check of analytic gradients.

use crate::error::{shape, Result};
use crate::loss::{self, softmax_t_into};
use crate::nn::Network;
use crate::tensor::Tensor;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// A batch loss: maps logits `[B, K]` to per-sample losses and their
/// per-sample gradients with respect to the logits.
pub trait BatchLoss {
    fn eval(&self, logits: &Tensor) -> (Vec<f64>, Tensor);
}

impl<F> BatchLoss for F
where
    F: Fn(&Tensor) -> (Vec<f64>, Tensor),
{
    fn eval(&self, logits: &Tensor) -> (Vec<f64>, Tensor) {
        self(logits)
    }
}

/// Cross-entropy of `softmax(z / tau)` against fixed per-sample targets.
#[derive(Debug, Clone)]
pub struct SoftmaxCrossEntropy {
    pub targets: Tensor,
    pub tau: f64,
}

impl BatchLoss for SoftmaxCrossEntropy {
    fn eval(&self, logits: &Tensor) -> (Vec<f64>, Tensor) {
        let (b, k) = (logits.dims()[0], logits.dims()[1]);
        let mut grad = Tensor::zeros(&[b, k]);
        let mut losses = Vec::with_capacity(b);
        let mut p = vec![0.0; k];
        for i in 0..b {
            softmax_t_into(logits.row(i), self.tau, &mut p);
            let t = self.targets.row(i);
            losses.push(loss::cross_entropy_raw(t, &p));
            let mass: f64 = t.iter().sum();
            for ((g, &pj), &tj) in grad.row_mut(i).iter_mut().zip(&p).zip(t) {
                *g = (mass * pj - tj) / self.tau;
            }
        }
        (losses, grad)
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all parameter entries.
    pub max_param_error: f64,
    /// Worst relative error over all input entries.
    pub max_input_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn mean_loss(net: &Network, batch: &Tensor, loss: &dyn BatchLoss) -> Result<f64> {
    let logits = net.predict(batch)?;
    let (losses, _) = loss.eval(&logits);
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Compares back-propagated gradients of the mean loss with central
/// differences, entry by entry, for every parameter and every input value.
pub fn grad_check(net: &Network, batch: &Tensor, loss: &dyn BatchLoss) -> Result<GradCheckReport> {
    let (logits, trace) = net.forward_traced(batch)?;
    let (losses, upstream) = loss.eval(&logits);
    if upstream.dims() != logits.dims() || losses.len() != logits.dims()[0] {
        return Err(shape("loss returned mismatched gradient"));
    }
    let analytic = net.backward_with(&trace, &upstream, trace.batch())?;

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_param_error: 0.0,
        max_input_error: 0.0,
        entries_checked: 0,
    };
    for p in 0..probe.params().len() {
        for j in 0..probe.params()[p].len() {
            let orig = probe.params()[p].data()[j];
            probe.params_mut()[p].data_mut()[j] = orig + FD_STEP;
            let up = mean_loss(&probe, batch, loss)?;
            probe.params_mut()[p].data_mut()[j] = orig - FD_STEP;
            let down = mean_loss(&probe, batch, loss)?;
            probe.params_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic.params[p].data()[j], numeric);
            report.max_param_error = report.max_param_error.max(err);
            report.entries_checked += 1;
        }
    }
    let mut x = batch.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + FD_STEP;
        let up = mean_loss(net, &x, loss)?;
        x.data_mut()[j] = orig - FD_STEP;
        let down = mean_loss(net, &x, loss)?;
        x.data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic.input.data()[j], numeric);
        report.max_input_error = report.max_input_error.max(err);
        report.entries_checked += 1;
    }
    Ok(report)
}
