use crate::{ParamStore, Real};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) {
        for (_, p) in store.iter().skip(self.m.len()) {
            self.m.push(vec![0.0; p.value.numel()]);
            self.v.push(vec![0.0; p.value.numel()]);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = p.grad.data();
            let mut updates = Vec::with_capacity(grad.len());
            for i in 0..grad.len() {
                let g = grad[i].f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                updates.push(self.lr * m_hat / (v_hat.sqrt() + self.eps));
            }
            for (w, u) in p.value.data_mut().iter_mut().zip(updates) {
                *w -= T::of(u);
            }
        }
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1 when untouched).
pub fn clip_gradients<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(_, p)| p.grad.sq_norm())
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in store.params_mut().iter_mut().filter(|p| !p.frozen) {
        p.grad
            .data_mut()
            .iter_mut()
            .for_each(|g| *g *= T::of(scale));
    }
    scale
}
