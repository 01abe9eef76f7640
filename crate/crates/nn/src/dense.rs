use rand::Rng;

use crate::gemm::gemm;
use crate::param::{Param, ParamInit};
use crate::{Module, NnError, Tensor};

/// Fully connected layer on `[n, 1, 1, features]` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,
    in_features: usize,
    out_features: usize,
}

#[derive(Debug)]
pub struct LinearCache {
    input: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, init: ParamInit, rng: &mut R) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), vec![out_features, in_features], init, rng),
            bias: Param::new(format!("{name}.bias"), vec![out_features], ParamInit::Zeros, rng),
            in_features,
            out_features,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }
    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LinearCache), NnError> {
        if x.item_len() != self.in_features {
            return Err(NnError::Shape {
                context: self.weight.name.clone(),
                expected: vec![self.in_features],
                actual: vec![x.item_len()],
            });
        }
        let n = x.n();
        let mut out = vec![0.0f32; n * self.out_features];
        gemm(n, self.in_features, self.out_features, x.data(), false, &self.weight.value, true, &mut out, 0.0);
        for row in out.chunks_exact_mut(self.out_features) {
            for (o, b) in row.iter_mut().zip(&self.bias.value) {
                *o += *b;
            }
        }
        Ok((Tensor::from_rows(n, self.out_features, out)?, LinearCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: LinearCache, grad_out: &Tensor, param_grads: bool) -> Tensor {
        let x = cache.input;
        let n = x.n();
        if param_grads {
            gemm(self.out_features, n, self.in_features, grad_out.data(), true, x.data(), false, &mut self.weight.grad, 1.0);
            for row in grad_out.data().chunks_exact(self.out_features) {
                for (g, d) in self.bias.grad.iter_mut().zip(row) {
                    *g += *d;
                }
            }
        }
        let mut dx = vec![0.0f32; n * self.in_features];
        gemm(n, self.out_features, self.in_features, grad_out.data(), false, &self.weight.value, false, &mut dx, 0.0);
        Tensor::from_vec(x.n(), x.h(), x.w(), x.c(), dx).expect("shape preserved")
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at training time.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f32,
}

#[derive(Debug)]
pub struct DropoutMask(Option<Vec<f32>>);

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate }
    }

    /// Identity when `rng` is `None` (inference).
    pub fn forward<R: Rng + ?Sized>(&self, x: &mut Tensor, rng: Option<&mut R>) -> DropoutMask {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let scale = 1.0 / (1.0 - self.rate);
                let mask: Vec<f32> = (0..x.data().len())
                    .map(|_| if rng.random::<f32>() < self.rate { 0.0 } else { scale })
                    .collect();
                for (v, m) in x.data_mut().iter_mut().zip(&mask) {
                    *v *= *m;
                }
                DropoutMask(Some(mask))
            }
            _ => DropoutMask(None),
        }
    }

    pub fn backward(&self, mask: DropoutMask, grad: &mut Tensor) {
        if let Some(mask) = mask.0 {
            for (g, m) in grad.data_mut().iter_mut().zip(&mask) {
                *g *= *m;
            }
        }
    }
}
