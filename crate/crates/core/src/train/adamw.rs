/// Adam with decoupled weight decay. Parameters and both moment vectors are
/// rounded to `f32` after every step, so a run resumed from a checkpoint
/// continues bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub(crate) fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

impl AdamW {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One update with gradient `grads` and learning rate `lr`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = round_f32(self.beta1 * *m + (1.0 - self.beta1) * g);
            *v = round_f32(self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let decayed = *p - lr * self.weight_decay * *p;
            *p = round_f32(decayed - lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps));
        }
    }
}
