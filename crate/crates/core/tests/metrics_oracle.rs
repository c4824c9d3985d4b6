use std::collections::BTreeSet;

use cckd_core::metrics::{PredictionLedger, Rate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rates computed directly from the set definitions.
fn oracle(truth: &[usize], teacher: &[usize], student: &[usize]) -> (Option<f64>, Option<f64>) {
    let all: BTreeSet<usize> = (0..truth.len()).collect();
    let c_t: BTreeSet<usize> = all.iter().copied().filter(|&i| teacher[i] == truth[i]).collect();
    let w_t: BTreeSet<usize> = all.difference(&c_t).copied().collect();
    let c_s: BTreeSet<usize> = all.iter().copied().filter(|&i| student[i] == truth[i]).collect();
    let w_s: BTreeSet<usize> = all.difference(&c_s).copied().collect();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (
        ratio(w_t.intersection(&c_s).count(), w_t.len()),
        ratio(c_t.intersection(&w_s).count(), c_t.len()),
    )
}

fn random_ledger(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let k = rng.random_range(2..5);
    let n = 20;
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    // bias toward agreement so every subset size occurs, including empty ones
    let p_t: f64 = rng.random_range(0.0..=1.0);
    let p_s: f64 = rng.random_range(0.0..=1.0);
    let mut noisy = |p: f64| -> Vec<usize> {
        truth
            .iter()
            .map(|&t| if rng.random_bool(p) { t } else { (t + rng.random_range(1..k)) % k })
            .collect()
    };
    let teacher = noisy(p_t);
    let student = noisy(p_s);
    (truth, teacher, student)
}

#[test]
fn rates_match_set_enumeration_over_1000_ledgers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut saw_na = false;
    for _ in 0..1000 {
        let (truth, teacher, student) = random_ledger(&mut rng);
        let ledger = PredictionLedger::from_predictions(&truth, &teacher, &student).unwrap();
        let (s, f) = oracle(&truth, &teacher, &student);
        assert_eq!(ledger.success_rate().value(), s);
        assert_eq!(ledger.failure_rate().value(), f);
        saw_na |= s.is_none() || f.is_none();
    }
    assert!(saw_na, "trials should include an undefined rate");
}

#[test]
fn rates_ignore_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (truth, teacher, student) = random_ledger(&mut rng);
        let mut order: Vec<usize> = (0..truth.len()).collect();
        order.shuffle(&mut rng);
        let pick = |v: &[usize]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let a = PredictionLedger::from_predictions(&truth, &teacher, &student).unwrap();
        let b = PredictionLedger::from_predictions(&pick(&truth), &pick(&teacher), &pick(&student)).unwrap();
        assert_eq!(a.success_rate(), b.success_rate());
        assert_eq!(a.failure_rate(), b.failure_rate());
    }
}

#[test]
fn undefined_rates_display_as_not_applicable() {
    let l = PredictionLedger::from_predictions(&[0, 1], &[0, 1], &[1, 1]).unwrap();
    assert_eq!(l.success_rate(), Rate::NotApplicable);
    assert_eq!(l.success_rate().to_string(), "n/a");
    assert_eq!(l.failure_rate(), Rate::Value(0.5));
}
