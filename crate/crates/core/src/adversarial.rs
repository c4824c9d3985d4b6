//! FGSM adversarial examples and robustness evaluation.

use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::loss::{argmax, softmax_t_into};
use crate::nn::Network;
use crate::tensor::Tensor;

use std::path::Path;

/// Default cap on FGSM iterations per sample.
pub const DEFAULT_MAX_ITERS: usize = 10;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the temperature-1 cross-entropy w.r.t. each input sample.
///
/// Rows are scaled by `1/B` (mean reduction), which leaves their signs intact.
fn input_gradient(model: &Network, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (logits, trace) = model.forward_traced(x)?;
    let k = model.num_classes();
    let mut upstream = Tensor::zeros(&[labels.len(), k]);
    for (i, &label) in labels.iter().enumerate() {
        let row = upstream.row_mut(i);
        softmax_t_into(logits.row(i), 1.0, row);
        row[label] -= 1.0;
    }
    let grads = model.backward_with(&trace, &upstream, labels.len())?;
    if !grads.input.is_finite() {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok(grads.input)
}

/// One FGSM step per sample: `clip(x + eps * sign(grad_x CE(y, softmax(f(x)))), 0, 1)`.
pub fn fgsm_step(model: &Network, x: &Tensor, labels: &[usize], epsilon: f64) -> Result<Tensor> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if x.dims().first() != Some(&labels.len()) {
        return Err(invalid("one label per input sample required"));
    }
    let grad = input_gradient(model, x, labels)?;
    let mut out = x.clone();
    for (v, g) in out.data_mut().iter_mut().zip(grad.data()) {
        *v = (*v + epsilon * sign(*g)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Result of crafting against one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Crafted {
    pub perturbed: Tensor,
    pub iterations_used: Vec<usize>,
    pub success: Vec<bool>,
}

/// Iterated FGSM. A sample stops as soon as the model misclassifies it
/// (success, possibly at iteration 0) or after `max_iters` steps (failure).
pub fn craft(
    model: &Network,
    x: &Tensor,
    labels: &[usize],
    epsilon: f64,
    max_iters: usize,
) -> Result<Crafted> {
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    let n = labels.len();
    let mut current = x.clone();
    let mut iterations_used = vec![0usize; n];
    let mut success = vec![false; n];
    let mut active: Vec<usize> = (0..n).collect();
    for iteration in 0..=max_iters {
        if active.is_empty() {
            break;
        }
        let batch = current.gather_rows(&active);
        let logits = model.predict(&batch)?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            if argmax(logits.row(row)) != labels[i] {
                success[i] = true;
                iterations_used[i] = iteration;
            } else if iteration == max_iters {
                iterations_used[i] = max_iters;
            } else {
                still.push(i);
            }
        }
        active = still;
        if active.is_empty() {
            break;
        }
        let batch = current.gather_rows(&active);
        let active_labels: Vec<usize> = active.iter().map(|&i| labels[i]).collect();
        let stepped = fgsm_step(model, &batch, &active_labels, epsilon)?;
        for (row, &i) in active.iter().enumerate() {
            current.row_mut(i).copy_from_slice(stepped.row(row));
        }
    }
    Ok(Crafted {
        perturbed: current,
        iterations_used,
        success,
    })
}

/// Perturbed samples crafted against one source model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet {
    pub originals: Tensor,
    pub perturbed: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub source_model_id: String,
    pub epsilon: f64,
    pub max_iters: usize,
    pub iterations_used: Vec<usize>,
    pub success: Vec<bool>,
}

impl AdversarialSet {
    /// Crafts against the first `count` samples of `data`.
    pub fn craft_from(
        model: &Network,
        data: &Dataset,
        count: usize,
        epsilon: f64,
        max_iters: usize,
        source_model_id: &str,
    ) -> Result<Self> {
        if count == 0 || count > data.len() {
            return Err(invalid(format!(
                "cannot craft {count} samples from a dataset of {}",
                data.len()
            )));
        }
        let subset = data.take_first(count);
        let mut perturbed = Vec::with_capacity(subset.inputs().len());
        let mut iterations_used = Vec::with_capacity(count);
        let mut success = Vec::with_capacity(count);
        let chunk = 250;
        for start in (0..count).step_by(chunk) {
            let idx: Vec<usize> = (start..(start + chunk).min(count)).collect();
            let (x, labels) = subset.batch(&idx);
            let c = craft(model, &x, &labels, epsilon, max_iters)?;
            perturbed.extend_from_slice(c.perturbed.data());
            iterations_used.extend(c.iterations_used);
            success.extend(c.success);
        }
        Ok(Self {
            perturbed: Tensor::new(subset.inputs().dims().to_vec(), perturbed)?,
            originals: subset.inputs().clone(),
            labels: subset.labels().to_vec(),
            num_classes: data.num_classes(),
            source_model_id: source_model_id.to_owned(),
            epsilon,
            max_iters,
            iterations_used,
            success,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        self.success.iter().filter(|&&s| s).count() as f64 / self.len() as f64
    }

    /// Largest per-sample L-infinity perturbation.
    pub fn max_linf(&self) -> f64 {
        self.originals
            .data()
            .iter()
            .zip(self.perturbed.data())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Indices `i` whose perturbation exceeds `epsilon * iterations_used[i]`.
    pub fn budget_violations(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let d = self
                    .originals
                    .row(i)
                    .iter()
                    .zip(self.perturbed.row(i))
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                d > self.epsilon * self.iterations_used[i] as f64 + 1e-12
            })
            .collect()
    }

    /// The perturbed samples as a dataset.
    pub fn perturbed_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.perturbed.clone(),
            self.labels.clone(),
            self.num_classes,
            crate::data::Split::Train,
        )
    }

    /// Only the successful attacks.
    pub fn successful_subset(&self) -> Option<AdversarialSet> {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.success[i]).collect();
        if keep.is_empty() {
            return None;
        }
        Some(AdversarialSet {
            originals: self.originals.gather_rows(&keep),
            perturbed: self.perturbed.gather_rows(&keep),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            source_model_id: self.source_model_id.clone(),
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            iterations_used: keep.iter().map(|&i| self.iterations_used[i]).collect(),
            success: vec![true; keep.len()],
        })
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let n = self.len();
        let f = |v: &[usize]| Tensor::from_vec(v.iter().map(|&x| x as f64).collect());
        vec![
            (format!("meta.source.{}", self.source_model_id), Tensor::from_vec(vec![0.0])),
            (
                "meta.attack".to_owned(),
                Tensor::from_vec(vec![self.epsilon, self.max_iters as f64, self.num_classes as f64]),
            ),
            ("originals".to_owned(), self.originals.clone()),
            ("perturbed".to_owned(), self.perturbed.clone()),
            ("labels".to_owned(), f(&self.labels)),
            ("iterations".to_owned(), f(&self.iterations_used)),
            (
                "success".to_owned(),
                Tensor::new(vec![n], self.success.iter().map(|&s| s as u8 as f64).collect())
                    .expect("n entries"),
            ),
        ]
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("adversarial set: {m}"));
        let mut source = None;
        let mut attack = None;
        let mut originals = None;
        let mut perturbed = None;
        let mut labels = None;
        let mut iterations = None;
        let mut success = None;
        for (name, t) in tensors {
            match name.as_str() {
                "meta.attack" => attack = Some(t),
                "originals" => originals = Some(t),
                "perturbed" => perturbed = Some(t),
                "labels" => labels = Some(t),
                "iterations" => iterations = Some(t),
                "success" => success = Some(t),
                other => match other.strip_prefix("meta.source.") {
                    Some(id) => source = Some(id.to_owned()),
                    None => return Err(bad(&format!("unexpected tensor {other:?}"))),
                },
            }
        }
        let counts = |t: Tensor| -> Vec<usize> { t.data().iter().map(|&v| v as usize).collect() };
        let attack = attack.ok_or_else(|| bad("missing meta.attack"))?;
        let &[epsilon, max_iters, k] = attack.data() else {
            return Err(bad("meta.attack must hold 3 values"));
        };
        let set = Self {
            originals: originals.ok_or_else(|| bad("missing originals"))?,
            perturbed: perturbed.ok_or_else(|| bad("missing perturbed"))?,
            labels: counts(labels.ok_or_else(|| bad("missing labels"))?),
            num_classes: k as usize,
            source_model_id: source.ok_or_else(|| bad("missing source id"))?,
            epsilon,
            max_iters: max_iters as usize,
            iterations_used: counts(iterations.ok_or_else(|| bad("missing iterations"))?),
            success: success
                .ok_or_else(|| bad("missing success"))?
                .data()
                .iter()
                .map(|&v| v != 0.0)
                .collect(),
        };
        let n = set.labels.len();
        if set.originals.dims() != set.perturbed.dims()
            || set.originals.dims()[0] != n
            || set.iterations_used.len() != n
            || set.success.len() != n
        {
            return Err(bad("inconsistent sample counts"));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write_file(path, &self.to_tensors())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(checkpoint::read_file(path)?)
    }
}

/// Temperature-1 accuracy of `model` on the perturbed samples.
pub fn evaluate_robustness(model: &Network, adv: &AdversarialSet) -> Result<f64> {
    if adv.is_empty() {
        return Err(invalid("empty adversarial set"));
    }
    crate::metrics::accuracy(model, &adv.perturbed_dataset()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Role};

    /// Two-class linear model on 2-D inputs: z = W x + b.
    fn linear(w: [f64; 4], b: [f64; 2]) -> Network {
        let mut net = Network::zeroed(vec![2], vec![LayerSpec::dense(2, 2)], Role::Student).unwrap();
        net.params_mut()[0].data_mut().copy_from_slice(&w);
        net.params_mut()[1].data_mut().copy_from_slice(&b);
        net
    }

    #[test]
    fn flat_loss_leaves_input_unchanged() {
        let net = linear([0.0; 4], [0.0; 2]);
        let x = Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap();
        assert_eq!(fgsm_step(&net, &x, &[0], 0.1).unwrap(), x);
    }

    #[test]
    fn direction_matches_closed_form_sign() {
        // One input feature, logistic model: z = [w x, 0], label 0.
        // dCE/dx = (p0 - 1) * w, so the step goes against sign(w).
        for w in [2.0, -3.0] {
            let mut net =
                Network::zeroed(vec![1], vec![LayerSpec::dense(1, 2)], Role::Student).unwrap();
            net.params_mut()[0].data_mut().copy_from_slice(&[w, 0.0]);
            let x = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
            let x2 = fgsm_step(&net, &x, &[0], 0.1).unwrap();
            let want = 0.5 - 0.1 * w.signum();
            assert!((x2.data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbation_is_clipped_to_unit_range() {
        let mut net = Network::zeroed(vec![1], vec![LayerSpec::dense(1, 2)], Role::Student).unwrap();
        // class 1 is the label and the gradient w.r.t. x is positive
        net.params_mut()[0].data_mut().copy_from_slice(&[1.0, -1.0]);
        let x = Tensor::new(vec![1, 1], vec![0.9]).unwrap();
        let x2 = fgsm_step(&net, &x, &[1], 0.15).unwrap();
        assert_eq!(x2.data()[0], 1.0);
    }

    #[test]
    fn already_misclassified_samples_succeed_at_iteration_zero() {
        let net = linear([1.0, 0.0, -1.0, 0.0], [0.0, 0.0]);
        let x = Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let c = craft(&net, &x, &[1], 0.1, 5).unwrap();
        assert_eq!(c.success, vec![true]);
        assert_eq!(c.iterations_used, vec![0]);
        assert_eq!(c.perturbed, x);
        assert!(craft(&net, &x, &[1], 0.1, 0).is_err());
    }

    #[test]
    fn near_boundary_flips_in_one_step() {
        // decision boundary x0 = x1; the sample sits just on the class-0 side
        let net = linear([1.0, -1.0, -1.0, 1.0], [0.0, 0.0]);
        let x = Tensor::new(vec![1, 2], vec![0.52, 0.48]).unwrap();
        let c = craft(&net, &x, &[0], 0.1, 10).unwrap();
        assert_eq!(c.success, vec![true]);
        assert_eq!(c.iterations_used, vec![1]);
        assert!((c.perturbed.data()[0] - 0.42).abs() < 1e-12);
        assert!((c.perturbed.data()[1] - 0.58).abs() < 1e-12);
    }

    #[test]
    fn sign_always_matches_closed_form_on_linear_model() {
        let w = [0.7, -1.3, -0.4, 2.1];
        let net = linear(w, [0.1, -0.2]);
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 19) as f64 / 19.0).collect();
        for label in 0..2 {
            let x = Tensor::new(vec![20, 2], xs.clone()).unwrap();
            let labels = vec![label; 20];
            let stepped = fgsm_step(&net, &x, &labels, 0.01).unwrap();
            for i in 0..20 {
                let xi = x.row(i);
                let z = [
                    w[0] * xi[0] + w[1] * xi[1] + 0.1,
                    w[2] * xi[0] + w[3] * xi[1] - 0.2,
                ];
                let p = crate::loss::softmax_t(&z, 1.0).unwrap().into_vec();
                for j in 0..2 {
                    // dCE/dx_j = sum_c (p_c - y_c) W[c, j]
                    let g: f64 = (0..2)
                        .map(|c| (p[c] - (c == label) as u8 as f64) * w[c * 2 + j])
                        .sum();
                    let want = (xi[j] + 0.01 * sign(g)).clamp(0.0, 1.0);
                    assert_eq!(stepped.row(i)[j], want);
                }
            }
        }
    }
}
