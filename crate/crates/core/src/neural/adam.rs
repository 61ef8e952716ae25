use serde::{Deserialize, Serialize};

use super::Param;

/// Adam with bias-corrected moments. Moment buffers are matched to
/// parameters by visiting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Starts a step; call [`Adam::update`] on every trainable parameter in
    /// a fixed order.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut Param) {
        if !param.trainable {
            return;
        }
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        let n = param.value.len();
        if self.m[slot].len() != n {
            self.m[slot] = vec![0.0; n];
            self.v[slot] = vec![0.0; n];
        }
        if param.grad.len() != n {
            return;
        }
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..n {
            let g = param.grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            param.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// One step over a list of parameters, slot `i` for `params[i]`.
    pub fn step_all(&mut self, params: &mut [&mut Param]) {
        self.begin_step();
        for (slot, p) in params.iter_mut().enumerate() {
            self.update(slot, p);
        }
    }
}
