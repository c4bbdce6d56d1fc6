//! Dense tanh network with a softmax head, trained by backpropagation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor_store::{Tensor, TensorMap};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `[n_out, n_in]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_out, self.n_in)
    }
}

/// Multi-layer perceptron. Parameters live in f64; [`Mlp::round_to_f32`]
/// snaps them onto the values a checkpoint can hold.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Training-time perturbations. Evaluation never uses one.
pub struct Augment<'a> {
    pub dropout_p: f64,
    pub input_noise_sigma: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// `log softmax(z)`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_features: usize, hidden: &[usize], n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Self::zeros(n_features, hidden, n_classes);
        for layer in &mut mlp.layers {
            let a = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.random_range(-a..a);
            }
        }
        mlp.round_to_f32();
        mlp
    }

    pub fn zeros(n_features: usize, hidden: &[usize], n_classes: usize) -> Self {
        let mut dims = vec![n_features];
        dims.extend_from_slice(hidden);
        dims.push(n_classes);
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for p in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *p = *it.next().unwrap();
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            *p = *p as f32 as f64;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }

    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        log_softmax(&self.logits(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.log_probs(x).into_iter().map(f64::exp).collect()
    }

    /// Mean cross-entropy over `batch` (pairs of input and label distribution)
    /// and its gradient with respect to every parameter.
    pub fn loss_and_gradient<'b>(
        &self,
        batch: impl IntoIterator<Item = (&'b [f64], &'b [f64])>,
        mut augment: Option<Augment<'_>>,
    ) -> (f64, Mlp) {
        let mut grad = Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect(),
        };
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        let mut count = 0usize;

        for (x, y) in batch {
            let mut input = x.to_vec();
            if let Some(aug) = augment.as_mut() {
                if aug.input_noise_sigma > 0.0 {
                    for v in &mut input {
                        *v += aug.input_noise_sigma * aug.rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }

            // activations[i] is the input to layer i; hidden layer i has
            // pre-dropout output tanhs[i] and dropout scale masks[i]
            let mut activations = vec![input];
            let mut tanhs: Vec<Vec<f64>> = Vec::with_capacity(last);
            let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(last);
            for (i, layer) in self.layers.iter().enumerate() {
                let mut h = layer.forward(activations.last().unwrap());
                if i < last {
                    h.iter_mut().for_each(|v| *v = v.tanh());
                    tanhs.push(h.clone());
                    let mask = augment.as_mut().filter(|a| a.dropout_p > 0.0).map(|aug| {
                        let keep = 1.0 - aug.dropout_p;
                        (0..h.len())
                            .map(|_| {
                                if aug.rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect::<Vec<f64>>()
                    });
                    if let Some(m) = &mask {
                        h.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
                    }
                    masks.push(mask);
                }
                activations.push(h);
            }

            let log_p = log_softmax(activations.last().unwrap());
            total -= y.iter().zip(&log_p).map(|(t, l)| t * l).sum::<f64>();
            count += 1;

            let y_sum: f64 = y.iter().sum();
            let mut delta: Vec<f64> = log_p
                .iter()
                .zip(y)
                .map(|(l, t)| y_sum * l.exp() - t)
                .collect();
            for i in (0..=last).rev() {
                let layer = &self.layers[i];
                let a_in = &activations[i];
                let g = &mut grad.layers[i];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    let row = &mut g.weight[o * layer.n_in..(o + 1) * layer.n_in];
                    row.iter_mut().zip(a_in).for_each(|(w, a)| *w += d * a);
                }
                if i == 0 {
                    break;
                }
                // back through the previous hidden layer's dropout and tanh
                let mut back = vec![0.0; layer.n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weight[o * layer.n_in..(o + 1) * layer.n_in];
                    back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
                }
                let t = &tanhs[i - 1];
                for (j, b) in back.iter_mut().enumerate() {
                    let m = masks[i - 1].as_ref().map_or(1.0, |mask| mask[j]);
                    *b *= m * (1.0 - t[j] * t[j]);
                }
                delta = back;
            }
        }

        if count > 0 {
            let inv = 1.0 / count as f64;
            grad.params_mut().for_each(|g| *g *= inv);
            total *= inv;
        }
        (total, grad)
    }

    /// `params -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &Mlp, lr: f64) {
        let g = grad.params();
        for (p, g) in self.params_mut().zip(g) {
            *p -= lr * g;
        }
    }

    /// Checkpoint form: `layers.<i>.weight` as `[out, in]` and `layers.<i>.bias`.
    pub fn to_tensor_map(&self) -> TensorMap {
        let mut tm = TensorMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.weight.iter().map(|&v| v as f32).collect();
            let b = l.bias.iter().map(|&v| v as f32).collect();
            tm.insert(
                format!("layers.{i}.weight"),
                Tensor::new(vec![l.n_out, l.n_in], w).expect("weight shape"),
            )
            .expect("unique name");
            tm.insert(
                format!("layers.{i}.bias"),
                Tensor::new(vec![l.n_out], b).expect("bias shape"),
            )
            .expect("unique name");
        }
        tm
    }

    pub fn from_tensor_map(tm: &TensorMap) -> Result<Self> {
        let n_layers = tm.len() / 2;
        if n_layers == 0 || !tm.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors do not form weight/bias pairs",
                tm.len()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let get = |kind: &str| {
                tm.get(&format!("layers.{i}.{kind}")).ok_or_else(|| {
                    Error::DimensionMismatch(format!("missing tensor layers.{i}.{kind}"))
                })
            };
            let (w, b) = (get("weight")?, get("bias")?);
            let (n_out, n_in) = match *w.shape() {
                [o, i] => (o, i),
                _ => {
                    return Err(Error::DimensionMismatch(format!(
                        "layers.{i}.weight has shape {:?}",
                        w.shape()
                    )))
                }
            };
            if b.shape() != [n_out] {
                return Err(Error::DimensionMismatch(format!(
                    "layers.{i}.bias has shape {:?}, expected [{n_out}]",
                    b.shape()
                )));
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.n_out) {
                if prev != n_in {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {i} takes {n_in} inputs but previous layer emits {prev}"
                    )));
                }
            }
            layers.push(Dense {
                n_in,
                n_out,
                weight: w.data().iter().map(|&v| v as f64).collect(),
                bias: b.data().iter().map(|&v| v as f64).collect(),
            });
        }
        Ok(Self { layers })
    }
}
