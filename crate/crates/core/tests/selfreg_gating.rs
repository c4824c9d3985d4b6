use cckd_core::data::synth_blobs;
use cckd_core::distill::{train_step, TeacherSignal};
use cckd_core::loss::{argmax, softmax_t};
use cckd_core::selfreg::{margin_delta, threshold};
use cckd_core::{DistillPlan, LayerSpec, Network, OptimizerState, Regime, Role, Split};

use proptest::prelude::*;

fn setup() -> (DistillPlan, Network, Network, cckd_core::Dataset) {
    let data = synth_blobs(3, 2, 20, 0.3, 1, Split::Train).unwrap();
    let layers = || vec![LayerSpec::dense(2, 8), LayerSpec::Relu, LayerSpec::dense(8, 3)];
    let teacher = Network::new(vec![2], layers(), Role::Teacher, 4).unwrap();
    let student = Network::new(vec![2], layers(), Role::Student, 5).unwrap();
    (DistillPlan::new(Regime::CckdTReg), teacher, student, data)
}

#[test]
fn epoch_zero_admits_exactly_the_misclassified_samples() {
    let (plan, teacher, mut student, data) = setup();
    let signal = TeacherSignal::compute(&teacher, &data, plan.tau).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let logits = student.predict(data.inputs()).unwrap();
    let wrong = (0..data.len())
        .filter(|&i| argmax(logits.row(i)) != data.labels()[i])
        .count();
    assert!(wrong > 0 && wrong < data.len(), "fixture should be mixed");
    let mut opt = OptimizerState::new(plan.optimizer, plan.learning_rate, student.params());
    let eta = threshold(0, plan.alpha).unwrap();
    assert_eq!(eta, 0.0);
    let out = train_step(&plan, &mut student, &mut opt, &data, Some(&signal), &all, eta).unwrap();
    assert_eq!(out.included, wrong);
}

#[test]
fn batch_with_no_survivors_leaves_everything_bitwise_unchanged() {
    let (plan, teacher, mut student, data) = setup();
    let signal = TeacherSignal::compute(&teacher, &data, plan.tau).unwrap();
    let logits = student.predict(data.inputs()).unwrap();
    let correct: Vec<usize> = (0..data.len())
        .filter(|&i| argmax(logits.row(i)) == data.labels()[i])
        .collect();
    let mut opt = OptimizerState::new(plan.optimizer, plan.learning_rate, student.params());
    // take one real step first so the moments are non-trivial
    let all: Vec<usize> = (0..data.len()).collect();
    train_step(&plan, &mut student, &mut opt, &data, Some(&signal), &all, 1.0).unwrap();
    let logits = student.predict(data.inputs()).unwrap();
    let still_correct: Vec<usize> = correct
        .into_iter()
        .filter(|&i| argmax(logits.row(i)) == data.labels()[i])
        .collect();
    assert!(!still_correct.is_empty());
    let params = student.params().to_vec();
    let opt_before = opt.clone();
    let out = train_step(&plan, &mut student, &mut opt, &data, Some(&signal), &still_correct, 0.0).unwrap();
    assert!(!out.updated);
    assert_eq!(out.included, 0);
    assert_eq!(student.params(), &params[..]);
    assert_eq!(opt, opt_before);
}

#[test]
fn skipped_samples_do_not_influence_the_update() {
    let (plan, teacher, student, data) = setup();
    let signal = TeacherSignal::compute(&teacher, &data, plan.tau).unwrap();
    let logits = student.predict(data.inputs()).unwrap();
    let (wrong, right): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| argmax(logits.row(i)) != data.labels()[i]);
    let mut mixed = wrong.clone();
    mixed.extend(&right);

    let mut a = student.clone();
    let mut oa = OptimizerState::new(plan.optimizer, plan.learning_rate, a.params());
    train_step(&plan, &mut a, &mut oa, &data, Some(&signal), &mixed, 0.0).unwrap();

    let mut b = student.clone();
    let mut ob = OptimizerState::new(plan.optimizer, plan.learning_rate, b.params());
    train_step(&plan, &mut b, &mut ob, &data, Some(&signal), &wrong, 0.0).unwrap();

    assert_eq!(a.params(), b.params());
    assert_eq!(oa, ob);
}

#[test]
fn gate_uses_the_tempered_margin() {
    // at tau = 20 the student's margin is small even when its tau = 1 margin is large
    let z = [3.0, 0.0, 0.0];
    let cold = margin_delta(softmax_t(&z, 1.0).unwrap().probs()).unwrap();
    let warm = margin_delta(softmax_t(&z, 20.0).unwrap().probs()).unwrap();
    assert!(cold > 0.8 && warm < 0.06);
}

proptest! {
    #[test]
    fn threshold_is_monotone_and_bounded(n in 0u64..400, alpha in 0.001f64..0.5) {
        let a = threshold(n, alpha).unwrap();
        let b = threshold(n + 1, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }
}
