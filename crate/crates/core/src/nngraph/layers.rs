use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Owner of all trainable tensors of a model, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Total number of scalar trainable values.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

/// 1-D convolution with zero "same" padding and stride 1.
///
/// Weights are laid out `(kernel, in_ch, out_ch)`. For even kernels the
/// extra padding goes on the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1dLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || kernel == 0 {
            return Err(Error::config(format!("conv {name}: zero-sized dimension")));
        }
        let fan_in = (kernel * in_ch) as f64;
        let fan_out = (kernel * out_ch) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let w = Tensor::from_fn([kernel, in_ch, out_ch], |_| {
            T::of(rng.random_range(-limit..limit))
        });
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, 1, out_ch]));
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.in_ch * self.out_ch + self.out_ch
    }

    pub fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `(batch, positions)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::full([1, 1, channels], T::one()),
        );
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([1, 1, channels]));
        Self {
            channels,
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::of(self.momentum);
        let one_m = T::one() - m;
        for c in 0..self.channels {
            self.running_mean[c] = m * self.running_mean[c] + one_m * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + one_m * stats.var[c];
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormLayer<U> {
        BatchNormLayer {
            channels: self.channels,
            gamma: self.gamma,
            beta: self.beta,
            running_mean: self
                .running_mean
                .iter()
                .map(|v| U::of(v.to_f64().unwrap()))
                .collect(),
            running_var: self
                .running_var
                .iter()
                .map(|v| U::of(v.to_f64().unwrap()))
                .collect(),
            eps: self.eps,
            momentum: self.momentum,
        }
    }
}

/// Batch mean and (biased) variance per channel from one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
    Sigmoid,
}

pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stream_rng;

    #[test]
    fn activation_values() {
        assert_eq!(elu(0.0f64), 0.0);
        assert_eq!(elu(1.0f64), 1.0);
        assert!((elu(-50.0f64) + 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
    }

    #[test]
    fn layer_parameter_counts() {
        let mut rng = stream_rng(10, 0);
        for _ in 0..10 {
            let mut store = ParamStore::<f64>::new();
            let (i, o, k) = (
                rng.random_range(1..40),
                rng.random_range(1..40),
                rng.random_range(1..8),
            );
            let conv = Conv1dLayer::new(&mut store, "c", i, o, k, &mut rng).unwrap();
            let bn = BatchNormLayer::new(&mut store, "bn", o);
            // hand enumeration: one weight per (tap, input, output) plus one bias per output
            let mut hand = 0;
            for _tap in 0..k {
                for _in in 0..i {
                    hand += o;
                }
            }
            hand += o;
            assert_eq!(conv.param_count(), hand);
            assert_eq!(bn.param_count(), 2 * o);
            assert_eq!(store.scalar_count(), hand + 2 * o);
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = stream_rng(11, 0);
        let mut store = ParamStore::<f32>::new();
        let conv = Conv1dLayer::new(&mut store, "c", 10, 20, 5, &mut rng).unwrap();
        let limit = (6.0f64 / 150.0).sqrt() as f32;
        assert!(store
            .value(conv.weight)
            .data()
            .iter()
            .all(|w| w.abs() <= limit));
        assert!(store.value(conv.bias).data().iter().all(|&b| b == 0.0));
        assert!(Conv1dLayer::new(&mut store, "bad", 0, 1, 1, &mut rng).is_err());
    }
}
