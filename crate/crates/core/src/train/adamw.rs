/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, wd: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] *= 1.0 - lr * wd;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Linear warmup from `lr/warmup_steps` to `lr`, then constant.
pub fn warmup_lr(base: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    }
}
