//! Training regimes: separate training, teacher-only distillation,
//! conventional KD, and the confidence-conditioned variants.
//!
//! Notation used below: `y` is the one-hot label, `y_t`/`y_s` are teacher and
//! student probabilities at the distillation temperature, `y_hat_s` is the
//! student at temperature 1, and `lambda = y . y_t` is the teacher's
//! confidence in the true class.

use std::fmt;
use std::str::FromStr;

use crate::data::{batches, Dataset};
use crate::error::{invalid, shape, Error, Result};
use crate::loss::{argmax, cross_entropy_raw, softmax_t_into, Distribution};
use crate::metrics;
use crate::nn::Network;
use crate::optim::{Algorithm, OptimizerState};
use crate::selfreg::{self, RegulationState};
use crate::tensor::Tensor;

/// How the student is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Ground-truth cross-entropy only.
    Separate,
    /// Teacher soft targets only.
    TeacherOnly,
    /// Soft targets plus a fixed-weight ground-truth term.
    KdNormal,
    /// Per-sample interpolation of the two losses by teacher confidence.
    CckdL,
    /// Soft targets mixed with the label by teacher confidence.
    CckdT,
    /// `CckdT` with self-regulated sample selection.
    CckdTReg,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Separate,
        Regime::TeacherOnly,
        Regime::KdNormal,
        Regime::CckdL,
        Regime::CckdT,
        Regime::CckdTReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Separate => "separate",
            Regime::TeacherOnly => "teacher_only",
            Regime::KdNormal => "kd_normal",
            Regime::CckdL => "cckd_l",
            Regime::CckdT => "cckd_t",
            Regime::CckdTReg => "cckd_t_reg",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Regime::Separate
    }

    pub fn is_regulated(self) -> bool {
        self == Regime::CckdTReg
    }

    /// Learning-rate default: 0.001 without a teacher, 0.01 when distilling.
    pub fn default_learning_rate(self) -> f64 {
        if self.needs_teacher() {
            0.01
        } else {
            0.001
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown regime {s:?}")))
    }
}

/// Regime selector plus every hyperparameter of a run.
///
/// Fields a regime does not use are kept so a run manifest echoes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillPlan {
    pub regime: Regime,
    pub tau: f64,
    /// Weight of the ground-truth term in conventional KD.
    pub balance_lambda: f64,
    /// Self-regulation threshold rate.
    pub alpha: f64,
    pub learning_rate: f64,
    pub optimizer: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl DistillPlan {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            tau: 20.0,
            balance_lambda: 0.3,
            alpha: 0.01,
            learning_rate: regime.default_learning_rate(),
            optimizer: Algorithm::Adam,
            epochs: 200,
            batch_size: 512,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.balance_lambda) {
            return bad(format!("balance_lambda must lie in [0, 1], got {}", self.balance_lambda));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

fn same_len(a: &Distribution, b: &Distribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(shape(format!(
            "distributions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn hot_index(y: &Distribution) -> Result<usize> {
    let p = y.probs();
    let ones: Vec<usize> = (0..p.len()).filter(|&i| p[i] == 1.0).collect();
    match ones[..] {
        [i] if p.iter().enumerate().all(|(j, &v)| j == i || v == 0.0) => Ok(i),
        _ => Err(invalid("label distribution is not one-hot")),
    }
}

/// Teacher probability of the true class, `y . y_t`.
pub fn teacher_confidence(y: &Distribution, y_t: &Distribution) -> Result<f64> {
    same_len(y, y_t)?;
    Ok(y_t.probs()[hot_index(y)?])
}

/// `CE(y_t -> y_s) + balance * CE(y -> y_hat_s)`.
pub fn kd_normal_loss(
    y_t: &Distribution,
    y_s: &Distribution,
    y_hat_s: &Distribution,
    y: &Distribution,
    balance_lambda: f64,
) -> Result<f64> {
    same_len(y_t, y_s)?;
    same_len(y_hat_s, y)?;
    same_len(y_t, y)?;
    if !(0.0..=1.0).contains(&balance_lambda) {
        return Err(invalid(format!("balance weight {balance_lambda} outside [0, 1]")));
    }
    Ok(cross_entropy_raw(y_t.probs(), y_s.probs())
        + balance_lambda * cross_entropy_raw(y.probs(), y_hat_s.probs()))
}

/// `lambda * CE(y_t -> y_s) + (1 - lambda) * CE(y -> y_hat_s)` with `lambda`
/// the teacher confidence.
pub fn cckd_l_loss(
    y_t: &Distribution,
    y_s: &Distribution,
    y_hat_s: &Distribution,
    y: &Distribution,
) -> Result<f64> {
    same_len(y_t, y_s)?;
    same_len(y_hat_s, y)?;
    let lambda = teacher_confidence(y, y_t)?;
    Ok(cckd_l_weighted(lambda, y_t, y_s, y_hat_s, y))
}

/// The CCKD-L objective for an explicitly given weight.
pub fn cckd_l_weighted(
    lambda: f64,
    y_t: &Distribution,
    y_s: &Distribution,
    y_hat_s: &Distribution,
    y: &Distribution,
) -> f64 {
    // at lambda in {0, 1} one product is an exact zero, so the sum equals
    // the surviving term bit for bit
    lambda * cross_entropy_raw(y_t.probs(), y_s.probs())
        + (1.0 - lambda) * cross_entropy_raw(y.probs(), y_hat_s.probs())
}

/// Confidence-conditioned target: `lambda * y_t + (1 - lambda) * y`,
/// L1-normalised.
pub fn cc_target(y: &Distribution, y_t: &Distribution) -> Result<Distribution> {
    let lambda = teacher_confidence(y, y_t)?;
    let mut mixed = vec![0.0; y.len()];
    cc_target_into(lambda, y_t.probs(), hot_index(y)?, &mut mixed);
    Ok(Distribution::from_unchecked(mixed))
}

fn cc_target_into(lambda: f64, y_t: &[f64], label: usize, out: &mut [f64]) {
    for (o, &t) in out.iter_mut().zip(y_t) {
        *o = lambda * t;
    }
    out[label] += 1.0 - lambda;
    let norm: f64 = out.iter().map(|v| v.abs()).sum();
    assert!(norm > 0.0, "confidence-conditioned target has zero mass");
    for o in out.iter_mut() {
        *o /= norm;
    }
}

/// `CE(y_c -> y_s)` with `y_s` at the distillation temperature.
pub fn cckd_t_loss(y_c: &Distribution, y_s: &Distribution) -> Result<f64> {
    same_len(y_c, y_s)?;
    Ok(cross_entropy_raw(y_c.probs(), y_s.probs()))
}

/// Adds `weight * d CE(target, softmax(z / tau)) / dz` to `grad`.
fn add_soft_ce_grad(target: &[f64], p: &[f64], tau: f64, weight: f64, grad: &mut [f64]) {
    let mass: f64 = target.iter().sum();
    for ((g, &pj), &tj) in grad.iter_mut().zip(p).zip(target) {
        *g += weight * (mass * pj - tj) / tau;
    }
}

/// Teacher outputs precomputed for a frozen teacher over a dataset.
#[derive(Debug, Clone)]
pub struct TeacherSignal {
    num_classes: usize,
    /// `y_t` at the distillation temperature, `[N, K]` flattened.
    soft: Vec<f64>,
    /// Teacher confidence per sample.
    lambdas: Vec<f64>,
}

impl TeacherSignal {
    pub fn compute(teacher: &Network, data: &Dataset, tau: f64) -> Result<Self> {
        if teacher.num_classes() != data.num_classes() {
            return Err(Error::Config(format!(
                "teacher has {} outputs but the data has {} classes",
                teacher.num_classes(),
                data.num_classes()
            )));
        }
        let logits = teacher.predict_all(data.inputs(), 1024)?;
        let k = data.num_classes();
        let mut soft = vec![0.0; data.len() * k];
        let mut lambdas = Vec::with_capacity(data.len());
        for (i, &label) in data.labels().iter().enumerate() {
            let row = &mut soft[i * k..(i + 1) * k];
            softmax_t_into(logits.row(i), tau, row);
            lambdas.push(row[label]);
        }
        Ok(Self {
            num_classes: k,
            soft,
            lambdas,
        })
    }

    pub fn soft(&self, i: usize) -> &[f64] {
        &self.soft[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

/// Per-sample loss and its gradient with respect to the student logits.
fn sample_loss(
    plan: &DistillPlan,
    logits: &[f64],
    label: usize,
    teacher: Option<(&[f64], f64)>,
    scratch: &mut Scratch,
    grad: &mut [f64],
) -> f64 {
    let tau = plan.tau;
    let k = logits.len();
    scratch.onehot.fill(0.0);
    scratch.onehot[label] = 1.0;
    softmax_t_into(logits, 1.0, &mut scratch.p_one);
    if plan.regime != Regime::Separate {
        softmax_t_into(logits, tau, &mut scratch.p_tau);
    }
    grad.fill(0.0);
    let hard_target = &scratch.onehot[..k];
    match (plan.regime, teacher) {
        (Regime::Separate, _) => {
            add_soft_ce_grad(hard_target, &scratch.p_one, 1.0, 1.0, grad);
            cross_entropy_raw(hard_target, &scratch.p_one)
        }
        (Regime::TeacherOnly, Some((y_t, _))) => {
            add_soft_ce_grad(y_t, &scratch.p_tau, tau, 1.0, grad);
            cross_entropy_raw(y_t, &scratch.p_tau)
        }
        (Regime::KdNormal, Some((y_t, _))) => {
            let b = plan.balance_lambda;
            add_soft_ce_grad(y_t, &scratch.p_tau, tau, 1.0, grad);
            add_soft_ce_grad(hard_target, &scratch.p_one, 1.0, b, grad);
            cross_entropy_raw(y_t, &scratch.p_tau) + b * cross_entropy_raw(hard_target, &scratch.p_one)
        }
        (Regime::CckdL, Some((y_t, lambda))) => {
            add_soft_ce_grad(y_t, &scratch.p_tau, tau, lambda, grad);
            add_soft_ce_grad(hard_target, &scratch.p_one, 1.0, 1.0 - lambda, grad);
            lambda * cross_entropy_raw(y_t, &scratch.p_tau)
                + (1.0 - lambda) * cross_entropy_raw(hard_target, &scratch.p_one)
        }
        (Regime::CckdT | Regime::CckdTReg, Some((y_t, lambda))) => {
            cc_target_into(lambda, y_t, label, &mut scratch.target);
            add_soft_ce_grad(&scratch.target, &scratch.p_tau, tau, 1.0, grad);
            cross_entropy_raw(&scratch.target, &scratch.p_tau)
        }
        (_, None) => unreachable!("teacher presence checked before training"),
    }
}

struct Scratch {
    onehot: Vec<f64>,
    p_one: Vec<f64>,
    p_tau: Vec<f64>,
    target: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            onehot: vec![0.0; k],
            p_one: vec![0.0; k],
            p_tau: vec![0.0; k],
            target: vec![0.0; k],
        }
    }
}

/// Metrics for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss over the samples that took part in updates.
    pub mean_loss: f64,
    /// Temperature-1 test accuracy after the epoch, when a test set is given.
    pub test_accuracy: Option<f64>,
    pub included: u64,
    pub presented: u64,
    pub updates: u64,
}

/// Result of [`run_distillation`].
#[derive(Debug, Clone)]
pub struct DistillReport {
    pub epochs: Vec<EpochStats>,
    /// Usage counters (every regime counts; only `cckd_t_reg` skips samples).
    pub usage: RegulationState,
    /// Teacher confidence per training sample, when a teacher is used.
    pub lambdas: Option<Vec<f64>>,
    pub optimizer_steps: u64,
}

/// Outcome of one mini-batch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub included: usize,
    pub loss_sum: f64,
    pub updated: bool,
}

/// Runs one mini-batch update of `student` on the samples `indices`.
///
/// With self-regulation the gate is evaluated on the current student at the
/// distillation temperature; excluded samples contribute nothing and the
/// loss is averaged over the survivors. A batch with no survivors leaves the
/// student and the optimizer untouched.
pub fn train_step(
    plan: &DistillPlan,
    student: &mut Network,
    optimizer: &mut OptimizerState,
    data: &Dataset,
    teacher: Option<&TeacherSignal>,
    indices: &[usize],
    eta: f64,
) -> Result<StepOutcome> {
    let k = student.num_classes();
    let mut scratch = Scratch::new(k);
    let survivors: Vec<usize> = if plan.regime.is_regulated() {
        let (x, labels) = data.batch(indices);
        let logits = student.predict(&x)?;
        let mut keep = Vec::with_capacity(indices.len());
        for (i, (&idx, &label)) in indices.iter().zip(&labels).enumerate() {
            softmax_t_into(logits.row(i), plan.tau, &mut scratch.p_tau);
            let predicted = argmax(&scratch.p_tau);
            let delta = selfreg::margin_unchecked(&scratch.p_tau);
            if selfreg::include_sample(predicted, label, delta, eta) {
                keep.push(idx);
            }
        }
        keep
    } else {
        indices.to_vec()
    };
    if survivors.is_empty() {
        return Ok(StepOutcome {
            included: 0,
            loss_sum: 0.0,
            updated: false,
        });
    }
    let (x, labels) = data.batch(&survivors);
    let (logits, trace) = student.forward_traced(&x)?;
    let mut upstream = Tensor::zeros(&[survivors.len(), k]);
    let mut loss_sum = 0.0;
    for (i, (&idx, &label)) in survivors.iter().zip(&labels).enumerate() {
        let signal = teacher.map(|t| (t.soft(idx), t.lambdas()[idx]));
        loss_sum += sample_loss(plan, logits.row(i), label, signal, &mut scratch, upstream.row_mut(i));
    }
    if !loss_sum.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }
    let grads = student.backward_with(&trace, &upstream, survivors.len())?;
    optimizer.step(student.params_mut(), &grads.params)?;
    Ok(StepOutcome {
        included: survivors.len(),
        loss_sum,
        updated: true,
    })
}

/// Trains `student` under `plan` for `plan.epochs` epochs.
///
/// The teacher is only read. Test accuracy is evaluated after every epoch at
/// temperature 1 when `test` is given.
pub fn run_distillation(
    plan: &DistillPlan,
    teacher: Option<&Network>,
    student: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<DistillReport> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train.sample_shape() != student.input_shape() {
        return Err(Error::Config(format!(
            "student expects inputs {:?}, data has {:?}",
            student.input_shape(),
            train.sample_shape()
        )));
    }
    if student.num_classes() != train.num_classes() {
        return Err(Error::Config(format!(
            "student has {} outputs, data has {} classes",
            student.num_classes(),
            train.num_classes()
        )));
    }
    let signal = match (plan.regime.needs_teacher(), teacher) {
        (false, _) => None,
        (true, None) => {
            return Err(Error::Config(format!("regime {} needs a teacher", plan.regime)))
        }
        (true, Some(t)) => {
            if t.input_shape() != student.input_shape() {
                return Err(Error::Config("teacher and student inputs differ".into()));
            }
            Some(TeacherSignal::compute(t, train, plan.tau)?)
        }
    };
    let mut optimizer = OptimizerState::new(plan.optimizer, plan.learning_rate, student.params());
    let mut usage = RegulationState::new(plan.alpha)?;
    let mut epochs = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        usage.epoch = epoch as u64;
        let eta = usage.eta();
        let mut stats = EpochStats {
            epoch,
            mean_loss: 0.0,
            test_accuracy: None,
            included: 0,
            presented: 0,
            updates: 0,
        };
        let mut loss_sum = 0.0;
        for batch in batches(train.len(), plan.batch_size, plan.seed, epoch as u64)? {
            let out = train_step(plan, student, &mut optimizer, train, signal.as_ref(), &batch, eta)?;
            for i in 0..batch.len() {
                usage.record_usage(i < out.included);
            }
            stats.included += out.included as u64;
            stats.presented += batch.len() as u64;
            stats.updates += out.updated as u64;
            loss_sum += out.loss_sum;
        }
        stats.mean_loss = if stats.included > 0 {
            loss_sum / stats.included as f64
        } else {
            0.0
        };
        if let Some(test) = test {
            stats.test_accuracy = Some(metrics::accuracy(student, test)?);
        }
        epochs.push(stats);
    }
    Ok(DistillReport {
        epochs,
        usage,
        lambdas: signal.map(|s| s.lambdas),
        optimizer_steps: optimizer.step_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use crate::loss::{cross_entropy, entropy, softmax_t};
    use proptest::prelude::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    const ABS: f64 = 1e-9;

    #[test]
    fn teacher_confidence_examples() {
        let y = one_hot(2, 3).unwrap();
        assert_eq!(teacher_confidence(&y, &d(&[0.1, 0.2, 0.7])).unwrap(), 0.7);
        let e0 = one_hot(0, 3).unwrap();
        assert_eq!(teacher_confidence(&e0, &e0).unwrap(), 1.0);
        let e1 = one_hot(1, 10).unwrap();
        assert!((teacher_confidence(&e1, &Distribution::uniform(10)).unwrap() - 0.1).abs() < 1e-15);
        assert!(teacher_confidence(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn kd_normal_examples() {
        // 0.7 ln 2 + 0.3 ln 2 + 0.3 (-ln 0.8)
        let v = kd_normal_loss(
            &d(&[0.7, 0.3]),
            &d(&[0.5, 0.5]),
            &d(&[0.8, 0.2]),
            &one_hot(0, 2).unwrap(),
            0.3,
        )
        .unwrap();
        let want = 2f64.ln() - 0.3 * 0.8f64.ln();
        assert!((v - want).abs() < ABS);
        assert!((v - 0.760090).abs() < 1e-6);

        let y_t = d(&[0.2, 0.5, 0.3]);
        let y = one_hot(1, 3).unwrap();
        let same = kd_normal_loss(&y_t, &y_t, &y, &y, 0.3).unwrap();
        assert!((same - entropy(&y_t)).abs() < 1e-11);

        let y_s = d(&[0.3, 0.3, 0.4]);
        let zero = kd_normal_loss(&y_t, &y_s, &d(&[0.1, 0.1, 0.8]), &y, 0.0).unwrap();
        assert_eq!(zero, cross_entropy(&y_t, &y_s).unwrap());
    }

    #[test]
    fn cckd_l_examples() {
        let v = cckd_l_loss(
            &d(&[0.6, 0.4]),
            &d(&[0.5, 0.5]),
            &d(&[0.9, 0.1]),
            &one_hot(0, 2).unwrap(),
        )
        .unwrap();
        let want = 0.6 * (0.6 * -(0.5f64).ln() + 0.4 * -(0.5f64).ln()) + 0.4 * -(0.9f64).ln();
        assert!((v - want).abs() < ABS);
        assert!((v - 0.458033).abs() < 1e-6);

        let y = one_hot(0, 2).unwrap();
        let y_s = d(&[0.3, 0.7]);
        let y_hat = d(&[0.6, 0.4]);
        // fully confident teacher: pure distillation term
        assert_eq!(
            cckd_l_loss(&y, &y_s, &y_hat, &y).unwrap(),
            cross_entropy(&y, &y_s).unwrap()
        );
        // zero confidence: pure ground-truth term
        let wrong = d(&[0.0, 1.0]);
        assert_eq!(
            cckd_l_loss(&wrong, &y_s, &y_hat, &y).unwrap(),
            cross_entropy(&y, &y_hat).unwrap()
        );
    }

    #[test]
    fn cc_target_examples() {
        let y = one_hot(1, 3).unwrap();
        let c = cc_target(&y, &d(&[0.1, 0.6, 0.3])).unwrap();
        for (got, want) in c.probs().iter().zip([0.06, 0.76, 0.18]) {
            assert!((got - want).abs() < ABS);
        }
        assert_eq!(cc_target(&y, &d(&[0.5, 0.0, 0.5])).unwrap(), y);
        assert_eq!(cc_target(&y, &y).unwrap(), y);
    }

    #[test]
    fn cckd_t_examples() {
        let c = d(&[0.06, 0.76, 0.18]);
        assert!((cckd_t_loss(&c, &Distribution::uniform(3)).unwrap() - 3f64.ln()).abs() < ABS);
        assert!((3f64.ln() - 1.098612).abs() < 1e-6);
        assert!((cckd_t_loss(&c, &c).unwrap() - entropy(&c)).abs() < 1e-12);
        let q = d(&[0.2, 0.7, 0.1]);
        assert_eq!(cckd_t_loss(&one_hot(1, 3).unwrap(), &q).unwrap(), -(0.7f64).ln());
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-3).then(|| w.iter().map(|v| v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn cc_target_closes_on_simplex_and_boosts_truth(y_t in simplex(5), label in 0usize..5) {
            let y = one_hot(label, 5).unwrap();
            let yt = Distribution::new(y_t).unwrap();
            let lambda = teacher_confidence(&y, &yt).unwrap();
            let mixed: f64 = yt.probs().iter().map(|v| lambda * v).sum::<f64>() + (1.0 - lambda);
            prop_assert!((mixed - 1.0).abs() <= 1e-12);
            let c = cc_target(&y, &yt).unwrap();
            prop_assert!(Distribution::new(c.probs().to_vec()).is_ok());
            prop_assert!(c.probs()[label] >= yt.probs()[label] - 1e-15);
            if lambda < 1.0 - 1e-6 {
                prop_assert!(c.probs()[label] > yt.probs()[label]);
            }
        }

        #[test]
        fn regime_gradients_match_finite_differences(
            z in prop::collection::vec(-3.0f64..3.0, 4),
            zt in prop::collection::vec(-3.0f64..3.0, 4),
            label in 0usize..4,
            which in 0usize..6,
        ) {
            let plan = DistillPlan { tau: 2.5, ..DistillPlan::new(Regime::ALL[which]) };
            let y_t = softmax_t(&zt, plan.tau).unwrap().into_vec();
            let lambda = y_t[label];
            let teacher = Some((&y_t[..], lambda));
            let mut scratch = Scratch::new(4);
            let mut grad = vec![0.0; 4];
            sample_loss(&plan, &z, label, teacher, &mut scratch, &mut grad);
            let mut tmp = vec![0.0; 4];
            for j in 0..4 {
                let mut zp = z.clone();
                zp[j] += 1e-6;
                let up = sample_loss(&plan, &zp, label, teacher, &mut scratch, &mut tmp);
                zp[j] -= 2e-6;
                let down = sample_loss(&plan, &zp, label, teacher, &mut scratch, &mut tmp);
                let numeric = (up - down) / 2e-6;
                prop_assert!((numeric - grad[j]).abs() < 1e-7, "{:?} j={} {} vs {}", plan.regime, j, numeric, grad[j]);
            }
        }

        #[test]
        fn sample_loss_agrees_with_public_formulas(
            z in prop::collection::vec(-5.0f64..5.0, 3),
            zt in prop::collection::vec(-5.0f64..5.0, 3),
            label in 0usize..3,
        ) {
            let tau = 20.0;
            let y_t = softmax_t(&zt, tau).unwrap();
            let y_s = softmax_t(&z, tau).unwrap();
            let y_hat = softmax_t(&z, 1.0).unwrap();
            let y = one_hot(label, 3).unwrap();
            let lambda = teacher_confidence(&y, &y_t).unwrap();
            let signal = Some((y_t.probs(), lambda));
            let mut scratch = Scratch::new(3);
            let mut g = vec![0.0; 3];
            let eval = |r: Regime, s: &mut Scratch, g: &mut [f64]| {
                sample_loss(&DistillPlan::new(r), &z, label, signal, s, g)
            };
            let kd = eval(Regime::KdNormal, &mut scratch, &mut g);
            prop_assert!((kd - kd_normal_loss(&y_t, &y_s, &y_hat, &y, 0.3).unwrap()).abs() < 1e-12);
            let l = eval(Regime::CckdL, &mut scratch, &mut g);
            prop_assert!((l - cckd_l_loss(&y_t, &y_s, &y_hat, &y).unwrap()).abs() < 1e-12);
            let t = eval(Regime::CckdT, &mut scratch, &mut g);
            let c = cc_target(&y, &y_t).unwrap();
            prop_assert!((t - cckd_t_loss(&c, &y_s).unwrap()).abs() < 1e-12);
        }
    }
}
