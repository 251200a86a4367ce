//! Adam with elementwise gradient clipping and decoupled weight decay.

use alloc::vec::Vec;

use super::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    /// Optimizer state for parameters with the given shapes.
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update. `lrs[k]` is the learning rate of parameter `k`; gradients
    /// are clipped to `[-clip, clip]` before the moment updates.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lrs: &[f64], weight_decay: f64, clip: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), params.len(), "gradient count");
        assert_eq!(lrs.len(), params.len(), "learning rate count");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (k, p) in params.iter_mut().enumerate() {
            let lr = lrs[k];
            let g = grads[k].as_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
                let gi = g[i].clamp(-clip, clip);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * weight_decay * *w;
                *w -= lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}
