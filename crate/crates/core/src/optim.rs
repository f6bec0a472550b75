//! Adam with bias correction.

use crate::autodiff::ParamStore;
use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Fresh moments shaped like every parameter in `store`.
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(self.m.len(), store.len(), "optimizer built for a different store");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for (i, x) in p.value.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.grad.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn store_with(value: Matrix, grad: Matrix) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", value);
        s.get_mut(id).grad = grad;
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let init = Matrix::from_rows(&[[1.0, -2.0]]);
        let (mut s, id) = store_with(init.clone(), Matrix::zeros(1, 2));
        let mut adam = AdamState::new(&s, 0.03);
        adam.step(&mut s);
        assert_eq!(s.value(id), &init);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_gradient_sign() {
        let (mut s, id) = store_with(Matrix::zeros(1, 3), Matrix::from_rows(&[[0.5, -3.0, 1e-3]]));
        let mut adam = AdamState::new(&s, 0.03);
        adam.step(&mut s);
        let p = s.get(id);
        for (x, want) in p.value.as_slice().iter().zip([-0.03, 0.03, -0.03]) {
            assert!((x - want).abs() < 1e-6, "{x} vs {want}");
        }
        assert_eq!(p.grad.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn two_steps_with_constant_gradient_match_hand_trace() {
        // Hand trace with g = 2, lr = 0.1, β1 = 0.9, β2 = 0.999, ε = 1e-8, x0 = 1:
        // step 1: m = 0.2, v = 0.004, m̂ = 2, v̂ = 4, x1 = 1 - 0.1·2/(2+1e-8)
        // step 2: m = 0.38, v = 0.007996, m̂ = 0.38/0.19 = 2,
        //         v̂ = 0.007996/0.001999 = 4, x2 = x1 - 0.1·2/(2+1e-8)
        let step = 0.1 * 2.0 / (2.0 + 1e-8);
        let x2 = 1.0 - step - step;
        let (mut s, id) = store_with(Matrix::scalar(1.0), Matrix::scalar(2.0));
        let mut adam = AdamState::new(&s, 0.1);
        adam.step(&mut s);
        s.get_mut(id).grad = Matrix::scalar(2.0);
        adam.step(&mut s);
        assert!((s.value(id).item() - x2).abs() < 1e-12);
    }
}
