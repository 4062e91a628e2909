//! Adam with bias correction, one moment pair per registered parameter.

/// Deterministic Adam. `begin_step` advances the shared timestep, then each
/// parameter is updated once via `update` with its accumulated gradient.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    moments: Vec<Moment>,
}

struct Moment {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(lr: f32, param_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: param_sizes
                .iter()
                .map(|&n| Moment {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update parameter `idx` in place. Call exactly once per parameter per
    /// step, after `begin_step`.
    pub fn update(&mut self, idx: usize, param: &mut [f32], grad: &[f32]) {
        assert!(self.t > 0, "begin_step before update");
        let mom = &mut self.moments[idx];
        assert_eq!(mom.m.len(), param.len(), "parameter size changed");
        assert_eq!(param.len(), grad.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            mom.m[i] = self.beta1 * mom.m[i] + (1.0 - self.beta1) * grad[i];
            mom.v[i] = self.beta2 * mom.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = mom.m[i] / bc1;
            let v_hat = mom.v[i] / bc2;
            param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Largest absolute first-moment entry; exposed for decay checks.
    pub fn max_abs_first_moment(&self) -> f32 {
        self.moments
            .iter()
            .flat_map(|mm| mm.m.iter())
            .fold(0.0f32, |acc, &v| acc.max(v.abs()))
    }
}
