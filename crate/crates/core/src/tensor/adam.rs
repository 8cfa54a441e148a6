//! Adam with bias correction, operating on flat parameter slices.

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Adam {
        Adam {
            cfg,
            t: 0,
            slots: param_sizes
                .iter()
                .map(|&n| Slot {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn lr(&self) -> f32 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameter tensors. `params[i]` and `grads[i]`
    /// must keep the same order and lengths across calls.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) {
        assert_eq!(params.len(), self.slots.len());
        assert_eq!(grads.len(), self.slots.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let c1 = (1.0 / (1.0 - (b1 as f64).powi(self.t as i32))) as f32;
        let c2 = (1.0 / (1.0 - (b2 as f64).powi(self.t as i32))) as f32;
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            assert_eq!(p.len(), slot.m.len());
            assert_eq!(g.len(), slot.m.len());
            for i in 0..p.len() {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
                let mhat = slot.m[i] * c1;
                let vhat = slot.v[i] * c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
