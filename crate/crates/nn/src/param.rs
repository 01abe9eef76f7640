use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// How to fill a fresh parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Zeros,
    Constant(f32),
    /// Zero-mean normal with the given standard deviation.
    Normal(f32),
    /// Glorot/Xavier uniform, `limit = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform { fan_in: usize, fan_out: usize },
}

/// A named trainable tensor together with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, shape: Vec<usize>, init: ParamInit, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let value = match init {
            ParamInit::Zeros => vec![0.0; len],
            ParamInit::Constant(c) => vec![c; len],
            ParamInit::Normal(std) => {
                let dist = Normal::new(0.0f32, std).expect("valid std");
                (0..len).map(|_| dist.sample(rng)).collect()
            }
            ParamInit::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
                (0..len).map(|_| dist.sample(rng)).collect()
            }
        };
        Self {
            name: name.into(),
            shape,
            grad: vec![0.0; len],
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}
