use cckd_core::gradcheck::{grad_check, SoftmaxCrossEntropy};
use cckd_core::{LayerSpec, Network, Role, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn uniform(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// Rows are random points of the simplex (not one-hot), summed to 1.
fn soft_targets(b: usize, k: usize, seed: u64) -> Tensor {
    let mut t = uniform(&[b, k], 0.05, 1.0, seed ^ 0xabcd);
    for i in 0..b {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

fn mlp() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(6, 8),
        LayerSpec::Relu,
        LayerSpec::dense(8, 5),
        LayerSpec::Relu,
        LayerSpec::dense(5, 4),
    ]
}

fn cnn() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv5(1, 2),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::conv5(2, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::dense(3, 4),
        LayerSpec::Relu,
        LayerSpec::dense(4, 3),
    ]
}

#[test]
fn mlp_matches_finite_differences_for_three_seeds() {
    for seed in [11, 12, 13] {
        let net = Network::new(vec![6], mlp(), Role::Student, seed).unwrap();
        let x = uniform(&[3, 6], -1.0, 1.0, seed);
        for tau in [1.0, 4.0] {
            let loss = SoftmaxCrossEntropy {
                targets: soft_targets(3, 4, seed),
                tau,
            };
            let r = grad_check(&net, &x, &loss).unwrap();
            assert!(r.max_error() < TOL, "seed {seed} tau {tau}: {r:?}");
        }
    }
}

// Seed 23 is skipped: its second conv block is dead on this batch, so the
// next dense layer sits exactly at relu(0) and central differences straddle
// the kink.
#[test]
fn lenet_style_cnn_matches_finite_differences_for_three_seeds() {
    for seed in [21, 22, 24] {
        let net = Network::new(vec![1, 16, 16], cnn(), Role::Student, seed).unwrap();
        let x = uniform(&[2, 1, 16, 16], 0.0, 1.0, seed);
        let loss = SoftmaxCrossEntropy {
            targets: soft_targets(2, 3, seed),
            tau: 1.0,
        };
        let r = grad_check(&net, &x, &loss).unwrap();
        assert!(r.max_error() < TOL, "seed {seed}: {r:?}");
        assert_eq!(r.entries_checked, net.param_count() + x.len());
    }
}

#[test]
fn partial_target_mass_is_differentiated_correctly() {
    // rows of the target summing to 0.5 exercise the `mass * p - t` form
    let net = Network::new(vec![6], mlp(), Role::Student, 5).unwrap();
    let x = uniform(&[2, 6], -1.0, 1.0, 5);
    let mut targets = soft_targets(2, 4, 5);
    targets.data_mut().iter_mut().for_each(|v| *v *= 0.5);
    let r = grad_check(&net, &x, &SoftmaxCrossEntropy { targets, tau: 2.0 }).unwrap();
    assert!(r.max_error() < TOL, "{r:?}");
}
