use crate::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Adam with bias correction. Moment buffers are laid out in the order
/// returned by [`Module::params_mut`], which must be stable for a module.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new<M: Module + ?Sized>(module: &M, cfg: AdamConfig) -> Self {
        let lens: Vec<usize> = module.params().iter().map(|p| p.len()).collect();
        Self {
            cfg,
            step: 0,
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update with learning rate `lr` using the accumulated gradients.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, lr: f32) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let step_size = lr * bc2.sqrt() / bc1;
        let eps_hat = eps * bc2.sqrt();
        for ((p, m), v) in module.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), m.len(), "Adam state does not match module {}", p.name);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                p.value[i] -= step_size * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
}
