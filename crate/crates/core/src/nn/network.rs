use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::LayerSpec;
use crate::error::{shape, Error, Result};
use crate::tensor::Tensor;

/// Whether a network supervises (teacher) or is being trained (student).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "teacher" => Some(Role::Teacher),
            "student" => Some(Role::Student),
            _ => None,
        }
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    /// Input to every layer, batch-major.
    inputs: Vec<Vec<f64>>,
    /// Winner indices for each pooling layer (empty for other kinds).
    pool_argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients of a mean-reduced loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// One tensor per parameter, aligned with [`Network::params`].
    pub params: Vec<Tensor>,
    /// Gradient with respect to the input batch.
    pub input: Tensor,
}

/// A feed-forward classifier: layer chain plus parameters.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    /// Index of the layer's weight tensor in `params`; the bias follows it.
    slots: Vec<Option<usize>>,
    params: Vec<Tensor>,
    role: Role,
    trace: Option<Trace>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        role: Role,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeroed(input_shape, layers, role)?;
        for (layer, slot) in net.layers.iter().zip(&net.slots) {
            let (Some(slot), Some((fan_in, fan_out))) = (slot, layer.fans()) else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.params[*slot].data_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Builds a network whose parameters are all zero.
    pub fn zeroed(input_shape: Vec<usize>, layers: Vec<LayerSpec>, role: Role) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape("network needs at least one layer"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(shape(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut slots = Vec::with_capacity(layers.len());
        let mut params = Vec::new();
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            current = layer
                .output_shape(&current)
                .map_err(|e| shape(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(current.clone());
            match layer.param_dims() {
                Some((w, b)) => {
                    slots.push(Some(params.len()));
                    params.push(Tensor::zeros(&w));
                    params.push(Tensor::zeros(&b));
                }
                None => slots.push(None),
            }
        }
        if current.len() != 1 || current[0] < 2 {
            return Err(shape(format!(
                "network must end in a vector of at least 2 logits, got {current:?}"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            slots,
            params,
            role,
            trace: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("non-empty")[0]
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn set_role(&mut self, role: Role) {
        self.role = role;
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Checkpoint names for the parameter tensors, aligned with [`Self::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.is_some() {
                names.push(format!("layer{i}.weight"));
                names.push(format!("layer{i}.bias"));
            }
        }
        names
    }

    /// Replaces all parameters, checking extents.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, (old, new)) in self.params.iter().zip(&params).enumerate() {
            if old.dims() != new.dims() {
                return Err(shape(format!(
                    "parameter {i}: expected {:?}, got {:?}",
                    old.dims(),
                    new.dims()
                )));
            }
        }
        self.params = params;
        self.trace = None;
        Ok(())
    }

    /// Total number of scalar parameters, derived from the layer chain alone.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.params {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.rank() < 2 || batch.dims()[1..] != self.input_shape[..] {
            return Err(shape(format!(
                "batch {:?} does not match input shape [B, {:?}]",
                batch.dims(),
                self.input_shape
            )));
        }
        Ok(batch.dims()[0])
    }

    fn in_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    fn conv_geom(&self, layer: usize) -> ConvGeom {
        let LayerSpec::Conv2d {
            out_channels,
            kernel,
            ..
        } = self.layers[layer]
        else {
            unreachable!("not a conv layer")
        };
        let s = self.in_shape(layer);
        ConvGeom {
            channels: s[0],
            height: s[1],
            width: s[2],
            out_channels,
            kernel,
        }
    }

    fn run(&self, batch: &Tensor, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_len: usize = b * self.shapes[i].iter().product::<usize>();
            let mut argmax = Vec::new();
            let y = match *layer {
                LayerSpec::Dense {
                    in_units,
                    out_units,
                } => {
                    let slot = self.slots[i].expect("dense has params");
                    let mut y = vec![0.0; out_len];
                    kernels::dense_forward(
                        b,
                        in_units,
                        out_units,
                        &x,
                        self.params[slot].data(),
                        self.params[slot + 1].data(),
                        &mut y,
                    );
                    y
                }
                LayerSpec::Conv2d { .. } => {
                    let slot = self.slots[i].expect("conv has params");
                    let mut y = vec![0.0; out_len];
                    kernels::conv_forward(
                        &self.conv_geom(i),
                        b,
                        &x,
                        self.params[slot].data(),
                        self.params[slot + 1].data(),
                        &mut y,
                    );
                    y
                }
                LayerSpec::MaxPool2x2 => {
                    let s = self.in_shape(i);
                    let mut y = vec![0.0; out_len];
                    argmax = vec![0u32; out_len];
                    kernels::maxpool_forward(b, (s[0], s[1], s[2]), &x, &mut y, &mut argmax);
                    y
                }
                LayerSpec::Relu => {
                    if trace.is_some() {
                        x.iter().map(|v| v.max(0.0)).collect()
                    } else {
                        for v in x.iter_mut() {
                            *v = v.max(0.0);
                        }
                        std::mem::take(&mut x)
                    }
                }
                LayerSpec::Flatten => {
                    if trace.is_some() {
                        x.clone()
                    } else {
                        std::mem::take(&mut x)
                    }
                }
            };
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut x, y));
                t.pool_argmax.push(argmax);
            } else {
                x = y;
            }
        }
        let mut dims = vec![b];
        dims.extend_from_slice(self.shapes.last().expect("non-empty"));
        let out = Tensor::new(dims, x)?;
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(out)
    }

    /// Logits for a batch `[B, input_shape...]`; pure in the parameters.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, None)
    }

    /// Logits plus the trace needed by [`Self::backward_with`].
    pub fn forward_traced(&self, batch: &Tensor) -> Result<(Tensor, Trace)> {
        let mut trace = Trace {
            batch: self.check_batch(batch)?,
            inputs: Vec::with_capacity(self.layers.len()),
            pool_argmax: Vec::with_capacity(self.layers.len()),
        };
        let logits = self.run(batch, Some(&mut trace))?;
        Ok((logits, trace))
    }

    /// Forward pass that keeps its trace for a following [`Self::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let (logits, trace) = self.forward_traced(batch)?;
        self.trace = Some(trace);
        Ok(logits)
    }

    /// Backward pass against the trace of the last [`Self::forward`].
    pub fn backward(&self, loss_grad: &Tensor) -> Result<Gradients> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.backward_with(trace, loss_grad, trace.batch)
    }

    /// Back-propagates per-sample loss gradients `[B, K]`.
    ///
    /// The result is the gradient of `(1 / count) * sum_b loss_b`; `count` is
    /// normally the batch size but may be smaller when rows of `loss_grad`
    /// are zeroed out for excluded samples.
    pub fn backward_with(&self, trace: &Trace, loss_grad: &Tensor, count: usize) -> Result<Gradients> {
        let b = trace.batch;
        if loss_grad.dims() != [b, self.num_classes()] {
            return Err(shape(format!(
                "loss gradient {:?} does not match logits [{b}, {}]",
                loss_grad.dims(),
                self.num_classes()
            )));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::State("trace does not belong to this network".into()));
        }
        if count == 0 {
            return Err(crate::error::invalid("mean over zero samples"));
        }
        let scale = 1.0 / count as f64;
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.dims())).collect();
        let mut dy: Vec<f64> = loss_grad.data().iter().map(|g| g * scale).collect();
        for i in (0..self.layers.len()).rev() {
            let x = &trace.inputs[i];
            let mut dx = vec![0.0; x.len()];
            match self.layers[i] {
                LayerSpec::Dense {
                    in_units,
                    out_units,
                } => {
                    let slot = self.slots[i].expect("dense has params");
                    let (gw, gb) = two_mut(&mut grads, slot);
                    kernels::dense_backward(
                        b,
                        in_units,
                        out_units,
                        x,
                        self.params[slot].data(),
                        &dy,
                        gw.data_mut(),
                        gb.data_mut(),
                        &mut dx,
                    );
                }
                LayerSpec::Conv2d { .. } => {
                    let slot = self.slots[i].expect("conv has params");
                    let (gw, gb) = two_mut(&mut grads, slot);
                    kernels::conv_backward(
                        &self.conv_geom(i),
                        b,
                        x,
                        self.params[slot].data(),
                        &dy,
                        gw.data_mut(),
                        gb.data_mut(),
                        &mut dx,
                    );
                }
                LayerSpec::MaxPool2x2 => {
                    kernels::maxpool_backward(&dy, &trace.pool_argmax[i], &mut dx);
                }
                LayerSpec::Relu => {
                    for ((d, &g), &v) in dx.iter_mut().zip(&dy).zip(x) {
                        *d = if v > 0.0 { g } else { 0.0 };
                    }
                }
                LayerSpec::Flatten => dx.copy_from_slice(&dy),
            }
            dy = dx;
        }
        let mut dims = vec![b];
        dims.extend_from_slice(&self.input_shape);
        Ok(Gradients {
            params: grads,
            input: Tensor::new(dims, dy)?,
        })
    }

    /// Logits for `inputs` evaluated in chunks of `chunk` samples.
    pub fn predict_all(&self, inputs: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = inputs.dims()[0];
        let k = self.num_classes();
        let mut out = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            out.extend_from_slice(self.predict(&inputs.gather_rows(&idx))?.data());
            start = end;
        }
        Tensor::new(vec![n, k], out)
    }
}

fn two_mut(v: &mut [Tensor], i: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = v.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense(n: usize) -> Network {
        let mut net = Network::zeroed(vec![n], vec![LayerSpec::dense(n, n)], Role::Student).unwrap();
        let w = net.params_mut()[0].data_mut();
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        net
    }

    #[test]
    fn identity_dense_layer_passes_input_through() {
        let net = identity_dense(3);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax() {
        let mut net = Network::new(
            vec![4],
            vec![LayerSpec::dense(4, 5), LayerSpec::Relu, LayerSpec::dense(5, 3)],
            Role::Student,
            3,
        )
        .unwrap();
        net.params_mut()[2].data_mut().fill(0.0);
        let x = Tensor::new(vec![1, 4], vec![0.3, 0.1, -0.7, 2.0]).unwrap();
        let z = net.predict(&x).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        let p = crate::loss::softmax_t(z.data(), 1.0).unwrap();
        assert!(p.probs().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let net = identity_dense(2);
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = identity_dense(3);
        assert!(matches!(
            net.predict(&Tensor::zeros(&[2, 4])),
            Err(Error::Shape(_))
        ));
        assert!(Network::zeroed(vec![3], vec![LayerSpec::dense(4, 2)], Role::Student).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut net = Network::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::conv5(1, 2),
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::dense(8, 3),
            ],
            Role::Student,
            1,
        )
        .unwrap();
        let x = Tensor::filled(&[2, 1, 8, 8], 0.5);
        net.forward(&x).unwrap();
        let g = net.backward(&Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.params.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(g.input.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dense_mean_squared_logits_closed_form() {
        // L = (1/B) sum_b 0.5 * ||W x_b + c||^2  =>  dW = (1/B) sum_b z_b x_b^T, dc = mean z_b
        let mut net = Network::zeroed(vec![2], vec![LayerSpec::dense(2, 2)], Role::Student).unwrap();
        net.params_mut()[0]
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, -1.0, 0.5]);
        net.params_mut()[1].data_mut().copy_from_slice(&[0.1, -0.3]);
        let x = Tensor::new(vec![2, 2], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let z = net.forward(&x).unwrap();
        // z_1 = [1-2+0.1, -1-0.5-0.3] = [-0.9, -1.8]; z_2 = [2+1+0.1, -2+0.25-0.3] = [3.1, -2.05]
        assert!((z.data()[0] + 0.9).abs() < 1e-12 && (z.data()[3] + 2.05).abs() < 1e-12);
        let g = net.backward(&z).unwrap();
        let want_w = [
            (-0.9 * 1.0 + 3.1 * 2.0) / 2.0,
            (-0.9 * -1.0 + 3.1 * 0.5) / 2.0,
            (-1.8 * 1.0 + -2.05 * 2.0) / 2.0,
            (-1.8 * -1.0 + -2.05 * 0.5) / 2.0,
        ];
        let want_b = [(-0.9 + 3.1) / 2.0, (-1.8 - 2.05) / 2.0];
        for (a, b) in g.params[0].data().iter().zip(want_w) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.params[1].data().iter().zip(want_b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_is_bitwise_repeatable() {
        let net = Network::new(
            vec![1, 12, 12],
            vec![
                LayerSpec::conv5(1, 3),
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::dense(48, 4),
            ],
            Role::Teacher,
            11,
        )
        .unwrap();
        let x = Tensor::new(
            vec![3, 1, 12, 12],
            (0..432).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect(),
        )
        .unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let (c, _) = net.forward_traced(&x).unwrap();
        assert_eq!(a, c);
    }
}
