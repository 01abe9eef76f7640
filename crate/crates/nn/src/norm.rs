use rand::Rng;

use crate::param::{Param, ParamInit};
use crate::{Module, NnError, Tensor};

/// Per-sample, per-channel normalization over the spatial extent, with a
/// learned scale and shift per channel.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: Param,
    pub beta: Param,
    channels: usize,
    eps: f32,
}

#[derive(Debug)]
pub struct InstanceNormCache {
    x_hat: Tensor,
    inv_std: Vec<f32>, // [n * c]
}

impl InstanceNorm {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], ParamInit::Constant(1.0), rng),
            beta: Param::new(format!("{name}.beta"), vec![channels], ParamInit::Zeros, rng),
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, InstanceNormCache), NnError> {
        if x.c() != self.channels {
            return Err(NnError::Shape {
                context: self.gamma.name.clone(),
                expected: vec![self.channels],
                actual: vec![x.c()],
            });
        }
        let (n, c) = (x.n(), x.c());
        let pixels = x.h() * x.w();
        let mut x_hat = x.clone();
        let mut inv_std = vec![0.0f32; n * c];
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            let item = x_hat.item_mut(b);
            mean.iter_mut().for_each(|m| *m = 0.0);
            var.iter_mut().for_each(|v| *v = 0.0);
            for px in item.chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += *v as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= pixels as f64);
            for px in item.chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    let d = *v as f64 - m;
                    *s += d * d;
                }
            }
            let istd: Vec<f32> = var
                .iter()
                .map(|s| (1.0 / (s / pixels as f64 + self.eps as f64).sqrt()) as f32)
                .collect();
            for px in item.chunks_exact_mut(c) {
                for ch in 0..c {
                    px[ch] = (px[ch] - mean[ch] as f32) * istd[ch];
                }
            }
            inv_std[b * c..(b + 1) * c].copy_from_slice(&istd);
        }
        let mut y = x_hat.clone();
        for px in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                px[ch] = px[ch] * self.gamma.value[ch] + self.beta.value[ch];
            }
        }
        Ok((y, InstanceNormCache { x_hat, inv_std }))
    }

    pub fn backward(&mut self, cache: InstanceNormCache, grad_out: &Tensor, param_grads: bool) -> Tensor {
        let x_hat = cache.x_hat;
        let (n, c) = (x_hat.n(), x_hat.c());
        let pixels = (x_hat.h() * x_hat.w()) as f32;
        let mut dx = Tensor::zeros(n, x_hat.h(), x_hat.w(), c);
        let mut sum_dy = vec![0.0f32; c];
        let mut sum_dy_xhat = vec![0.0f32; c];
        for b in 0..n {
            let xh = x_hat.item(b);
            let dy = grad_out.item(b);
            sum_dy.iter_mut().for_each(|v| *v = 0.0);
            sum_dy_xhat.iter_mut().for_each(|v| *v = 0.0);
            for (px_x, px_d) in xh.chunks_exact(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    sum_dy[ch] += px_d[ch];
                    sum_dy_xhat[ch] += px_d[ch] * px_x[ch];
                }
            }
            if param_grads {
                for ch in 0..c {
                    self.gamma.grad[ch] += sum_dy_xhat[ch];
                    self.beta.grad[ch] += sum_dy[ch];
                }
            }
            let istd = &cache.inv_std[b * c..(b + 1) * c];
            let out = dx.item_mut(b);
            for ((o, px_x), px_d) in out.chunks_exact_mut(c).zip(xh.chunks_exact(c)).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    let g = self.gamma.value[ch] * istd[ch];
                    o[ch] = g * (px_d[ch] - sum_dy[ch] / pixels - px_x[ch] * sum_dy_xhat[ch] / pixels);
                }
            }
        }
        dx
    }
}

impl Module for InstanceNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
