//! Tape-based reverse-mode differentiation over layer-level operations.

use super::kernels::{conv1d_backward, conv1d_forward, ConvDims};
use super::layers::{
    elu, sigmoid, Activation, BatchNormLayer, BatchStats, Conv1dLayer, Mode, ParamId, ParamStore,
};
use super::tensor::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: NodeId,
        layer: Conv1dLayer,
    },
    BatchNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    Act {
        x: NodeId,
        act: Activation,
    },
    Reshape {
        x: NodeId,
    },
    PowerNorm {
        x: NodeId,
        inv_scale: Vec<T>,
    },
    AddConst {
        x: NodeId,
    },
    Bce {
        pred: NodeId,
        target: Vec<T>,
    },
    WeightedSum {
        x: NodeId,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A recorded forward computation. Parameter values are read from the
/// [`ParamStore`] passed to each operation; the store must not change
/// between the forward pass and [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients with respect to the graph's input nodes after a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.nodes[node.0].as_ref()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        layer: &Conv1dLayer,
        store: &ParamStore<T>,
    ) -> Result<NodeId> {
        let [batch, len, in_ch] = self.shape(x);
        if in_ch != layer.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {in_ch}",
                layer.in_ch
            )));
        }
        let d = ConvDims {
            batch,
            len,
            in_ch,
            out_ch: layer.out_ch,
            kernel: layer.kernel,
            pad_left: layer.pad_left(),
        };
        let mut out = Tensor::zeros([batch, len, layer.out_ch]);
        conv1d_forward(
            d,
            self.value(x).data(),
            store.value(layer.weight).data(),
            store.value(layer.bias).data(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::Conv { x, layer: *layer }))
    }

    /// In training mode the batch statistics are returned so the caller can
    /// fold them into the layer's running averages.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        layer: &BatchNormLayer<T>,
        store: &ParamStore<T>,
        mode: Mode,
    ) -> Result<(NodeId, Option<BatchStats<T>>)> {
        let [batch, len, ch] = self.shape(x);
        if ch != layer.channels {
            return Err(Error::shape(format!(
                "batch norm expects {} channels, got {ch}",
                layer.channels
            )));
        }
        if mode == Mode::Train && batch < 2 {
            return Err(Error::Degenerate(format!(
                "batch norm training needs a batch of at least 2, got {batch}"
            )));
        }
        let xv = self.value(x).data();
        let eps = T::of(layer.eps);
        let (mean, var) = match mode {
            Mode::Train => {
                let count = T::of((batch * len) as f64);
                let mut mean = vec![T::zero(); ch];
                for row in xv.chunks_exact(ch) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m / count);
                let mut var = vec![T::zero(); ch];
                for row in xv.chunks_exact(ch) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / count);
                (mean, var)
            }
            Mode::Eval => (layer.running_mean.clone(), layer.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let gamma = store.value(layer.gamma).data();
        let beta = store.value(layer.beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = Tensor::zeros([batch, len, ch]);
        for ((hrow, orow), row) in xhat
            .chunks_exact_mut(ch)
            .zip(out.data_mut().chunks_exact_mut(ch))
            .zip(xv.chunks_exact(ch))
        {
            for c in 0..ch {
                let h = (row[c] - mean[c]) * inv_std[c];
                hrow[c] = h;
                orow[c] = gamma[c] * h + beta[c];
            }
        }
        let stats = (mode == Mode::Train).then(|| BatchStats { mean, var });
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: layer.gamma,
                beta: layer.beta,
                xhat,
                inv_std,
                mode,
            },
        );
        Ok((id, stats))
    }

    /// Linear activation records no node.
    pub fn activation(&mut self, x: NodeId, act: Activation) -> NodeId {
        let f: fn(T) -> T = match act {
            Activation::Linear => return x,
            Activation::Elu => elu,
            Activation::Sigmoid => sigmoid,
        };
        let out = self.value(x).map(f);
        self.push(out, Op::Act { x, act })
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Elu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Scales every frame (batch entry) to unit average power over its
    /// positions, treating the channel axis as the components of one symbol.
    pub fn power_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let [batch, len, ch] = self.shape(x);
        let xv = self.value(x).data();
        let frame = len * ch;
        let mut out = Tensor::zeros([batch, len, ch]);
        let mut inv_scale = Vec::with_capacity(batch);
        for (src, dst) in xv
            .chunks_exact(frame)
            .zip(out.data_mut().chunks_exact_mut(frame))
        {
            let power = src.iter().map(|&v| v * v).sum::<T>() / T::of(len as f64);
            if !(power > T::zero()) || !power.is_finite() {
                return Err(Error::Degenerate(format!("frame power is {power}")));
            }
            let inv = power.sqrt().recip();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * inv;
            }
            inv_scale.push(inv);
        }
        Ok(self.push(out, Op::PowerNorm { x, inv_scale }))
    }

    /// `x + c` for a constant `c` (the channel noise); `c` gets no gradient.
    pub fn add_const(&mut self, x: NodeId, c: &Tensor<T>) -> Result<NodeId> {
        if c.shape() != self.shape(x) {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                c.shape(),
                self.shape(x)
            )));
        }
        let mut out = self.value(x).clone();
        out.add_assign(c);
        Ok(self.push(out, Op::AddConst { x }))
    }

    /// Mean binary cross-entropy (natural log) between `pred` and 0/1 `target`.
    pub fn bce(&mut self, pred: NodeId, target: &Tensor<T>) -> Result<NodeId> {
        if target.shape() != self.shape(pred) {
            return Err(Error::shape(format!(
                "target {:?} vs prediction {:?}",
                target.shape(),
                self.shape(pred)
            )));
        }
        let loss = bce_value(self.value(pred).data(), target.data());
        Ok(self.push(
            Tensor::full([1, 1, 1], loss),
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    /// `sum_i w_i x_i`, a generic scalar head.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &Tensor<T>) -> Result<NodeId> {
        if weights.shape() != self.shape(x) {
            return Err(Error::shape("weights must match the input shape"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum::<T>();
        Ok(self.push(
            Tensor::full([1, 1, 1], s),
            Op::WeightedSum {
                x,
                weights: weights.data().to_vec(),
            },
        ))
    }

    /// Back-propagates from the scalar node `root`, accumulating parameter
    /// gradients into `store`.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward needs a scalar root"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::Conv { x, layer } => {
                    let xt = self.value(*x);
                    let [batch, len, in_ch] = xt.shape();
                    let d = ConvDims {
                        batch,
                        len,
                        in_ch,
                        out_ch: layer.out_ch,
                        kernel: layer.kernel,
                        pad_left: layer.pad_left(),
                    };
                    let w = store.value(layer.weight).clone();
                    let mut gw = Tensor::zeros(w.shape());
                    let mut gb = Tensor::zeros([1, 1, layer.out_ch]);
                    let mut gx = Tensor::zeros(xt.shape());
                    conv1d_backward(
                        d,
                        xt.data(),
                        w.data(),
                        g.data(),
                        gw.data_mut(),
                        gb.data_mut(),
                        Some(gx.data_mut()),
                    );
                    store.get_mut(layer.weight).grad.add_assign(&gw);
                    store.get_mut(layer.bias).grad.add_assign(&gb);
                    accumulate(&mut grads, *x, gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let ch = inv_std.len();
                    let gam = store.value(*gamma).data().to_vec();
                    let mut dgamma = vec![T::zero(); ch];
                    let mut dbeta = vec![T::zero(); ch];
                    for (grow, hrow) in g.data().chunks_exact(ch).zip(xhat.chunks_exact(ch)) {
                        for c in 0..ch {
                            dgamma[c] += grow[c] * hrow[c];
                            dbeta[c] += grow[c];
                        }
                    }
                    let mut gx = Tensor::zeros(g.shape());
                    match mode {
                        Mode::Eval => {
                            for (dst, grow) in gx
                                .data_mut()
                                .chunks_exact_mut(ch)
                                .zip(g.data().chunks_exact(ch))
                            {
                                for c in 0..ch {
                                    dst[c] = grow[c] * gam[c] * inv_std[c];
                                }
                            }
                        }
                        Mode::Train => {
                            // dx = inv_std/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*gamma
                            let m = T::of((g.len() / ch) as f64);
                            for (dst, (grow, hrow)) in gx
                                .data_mut()
                                .chunks_exact_mut(ch)
                                .zip(g.data().chunks_exact(ch).zip(xhat.chunks_exact(ch)))
                            {
                                for c in 0..ch {
                                    let sum_dxhat = dbeta[c] * gam[c];
                                    let sum_dxhat_xhat = dgamma[c] * gam[c];
                                    dst[c] = inv_std[c] / m
                                        * (m * grow[c] * gam[c]
                                            - sum_dxhat
                                            - hrow[c] * sum_dxhat_xhat);
                                }
                            }
                        }
                    }
                    add_into(&mut store.get_mut(*gamma).grad, &dgamma);
                    add_into(&mut store.get_mut(*beta).grad, &dbeta);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Act { x, act } => {
                    let y = node.value.data();
                    let mut gx = g.clone();
                    let xv = self.value(*x).data();
                    for ((d, &yv), &xv) in gx.data_mut().iter_mut().zip(y).zip(xv) {
                        *d *= match act {
                            Activation::Elu if xv > T::zero() => T::one(),
                            Activation::Elu => yv + T::one(),
                            Activation::Sigmoid => yv * (T::one() - yv),
                            Activation::Linear => T::one(),
                        };
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape { x } => {
                    let gx = g.reshape(self.shape(*x))?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::PowerNorm { x, inv_scale } => {
                    // dx = (g - y * <g, y> / n) / s per frame
                    let [batch, len, ch] = g.shape();
                    let frame = len * ch;
                    let n = T::of(len as f64);
                    let y = node.value.data();
                    let mut gx = Tensor::zeros([batch, len, ch]);
                    for b in 0..batch {
                        let r = b * frame..(b + 1) * frame;
                        let (gf, yf) = (&g.data()[r.clone()], &y[r.clone()]);
                        let dot = gf.iter().zip(yf).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((d, &gv), &yv) in gx.data_mut()[r].iter_mut().zip(gf).zip(yf) {
                            *d = (gv - yv * dot) * inv_scale[b];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::AddConst { x } => accumulate(&mut grads, *x, g),
                Op::Bce { pred, target } => {
                    let p = self.value(*pred);
                    let upstream = g.data()[0];
                    let scale = upstream / T::of(p.len() as f64);
                    let lo = T::of(BCE_CLAMP);
                    let hi = T::one() - lo;
                    let gx = Tensor::from_vec(
                        p.shape(),
                        p.data()
                            .iter()
                            .zip(target)
                            .map(|(&pv, &t)| {
                                let pc = pv.max(lo).min(hi);
                                scale * (pc - t) / (pc * (T::one() - pc))
                            })
                            .collect(),
                    )?;
                    accumulate(&mut grads, *pred, gx);
                }
                Op::WeightedSum { x, weights } => {
                    let upstream = g.data()[0];
                    let gx = Tensor::from_vec(
                        self.shape(*x),
                        weights.iter().map(|&w| w * upstream).collect(),
                    )?;
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { nodes: grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn add_into<T: Scalar>(t: &mut Tensor<T>, v: &[T]) {
    for (a, &b) in t.data_mut().iter_mut().zip(v) {
        *a += b;
    }
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce_value<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let lo = T::of(BCE_CLAMP);
    let hi = T::one() - lo;
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(lo).min(hi).to_f64().unwrap();
            let t = t.to_f64().unwrap();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    T::of(total / pred.len() as f64)
}
