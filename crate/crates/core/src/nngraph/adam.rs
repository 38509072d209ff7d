use super::layers::ParamStore;
use super::tensor::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-7;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `store` from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        if self.first.is_empty() {
            self.first = store
                .iter()
                .map(|p| vec![T::zero(); p.value.len()])
                .collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.data().to_vec();
            adam_update(
                p.value.data_mut(),
                &g,
                m,
                v,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
        }
    }
}

/// One Adam update of a flat parameter slice. `c1` and `c2` are the
/// bias-correction denominators `1 - beta^t`.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let (c1, c2, lr, eps) = (T::of(c1), T::of(c2), T::of(lr), T::of(eps));
    for (((w, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nngraph::Tensor;

    fn store_with(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("w", Tensor::from_vec([1, 1, n], values).unwrap());
        s
    }

    #[test]
    fn single_step_descends() {
        let mut s = store_with(vec![1.0]);
        s.get_mut(crate::nngraph::ParamId(0)).grad.data_mut()[0] = 2.0; // d/dw w^2
        let mut adam = AdamState::new(0.001);
        adam.step(&mut s);
        let w = s.value(crate::nngraph::ParamId(0)).data()[0];
        assert!(w < 1.0);
        assert!((w - (1.0 - 0.001)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store_with(vec![0.3, -2.0]);
        let before = s.clone();
        let mut adam = AdamState::new(0.01);
        adam.step(&mut s);
        assert_eq!(
            s.value(crate::nngraph::ParamId(0)),
            before.value(crate::nngraph::ParamId(0))
        );
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = 1/2 sum_i a_i (w_i - c_i)^2
        let a = [1.0, 2.0, 0.5, 3.0, 1.5];
        let c = [0.5, -1.0, 2.0, 0.0, -0.3];
        let id = crate::nngraph::ParamId(0);
        let mut s = store_with(vec![0.0; 5]);
        let mut adam = AdamState::new(0.01);
        let grad = |w: &[f64]| -> Vec<f64> { (0..5).map(|i| a[i] * (w[i] - c[i])).collect() };
        for _ in 0..2000 {
            let g = grad(s.value(id).data());
            s.get_mut(id).grad.data_mut().copy_from_slice(&g);
            adam.step(&mut s);
        }
        let g = grad(s.value(id).data());
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }
}
