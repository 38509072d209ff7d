//! A small reverse-mode autodiff engine with just the pieces the
//! autoencoder needs: 1-D convolution, batch normalization, ELU / sigmoid /
//! linear activations, reshape, per-frame power normalization, an additive
//! constant (channel noise), binary cross-entropy and Adam.

mod adam;
mod graph;
pub mod kernels;
mod layers;
mod tensor;

pub use adam::{adam_update, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use graph::{bce_value, Gradients, Graph, NodeId, BCE_CLAMP};
pub use layers::{
    elu, sigmoid, Activation, BatchNormLayer, BatchStats, Conv1dLayer, Mode, Param, ParamId,
    ParamStore, BN_EPS, BN_MOMENTUM,
};
pub use tensor::{Scalar, Shape, Tensor};

/// Central finite-difference gradient checking, shared by unit and
/// integration tests.
pub mod gradcheck {
    use super::{ParamStore, Tensor};

    /// Step used for the central differences.
    pub const STEP: f64 = 1e-4;

    /// Worst per-element relative error `|a - n| / max(|a|, |n|, floor)`.
    pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    /// Numerical gradient of `f` with respect to every scalar in `store`,
    /// parameter by parameter.
    pub fn numeric_param_grads(
        store: &mut ParamStore<f64>,
        mut f: impl FnMut(&ParamStore<f64>) -> f64,
    ) -> Vec<Vec<f64>> {
        let ids: Vec<_> = (0..store.len()).map(super::ParamId).collect();
        let mut out = Vec::new();
        for id in ids {
            let len = store.value(id).len();
            let mut g = vec![0.0; len];
            for (i, gi) in g.iter_mut().enumerate() {
                let orig = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + STEP;
                let plus = f(store);
                store.get_mut(id).value.data_mut()[i] = orig - STEP;
                let minus = f(store);
                store.get_mut(id).value.data_mut()[i] = orig;
                *gi = (plus - minus) / (2.0 * STEP);
            }
            out.push(g);
        }
        out
    }

    pub fn numeric_input_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
        let mut probe = x.clone();
        (0..x.len())
            .map(|i| {
                let orig = x.data()[i];
                probe.data_mut()[i] = orig + STEP;
                let plus = f(&probe);
                probe.data_mut()[i] = orig - STEP;
                let minus = f(&probe);
                probe.data_mut()[i] = orig;
                (plus - minus) / (2.0 * STEP)
            })
            .collect()
    }
}
