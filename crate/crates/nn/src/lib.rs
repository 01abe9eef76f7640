//! A deliberately small neural-network toolkit: NHWC `f32` tensors, strided
//! convolutions, transposed convolutions, instance normalization, dense layers
//! and Adam, each with a hand-written backward pass.
//!
//! Layers are immutable during the forward pass and hand back a cache object;
//! `backward` consumes that cache and accumulates parameter gradients into the
//! layer's own [`Param`] buffers. The same layer can therefore be applied
//! several times in one step (e.g. `G(x)` and `G(G'(x))`) and the gradients of
//! every application add up.
//!
//! Everything runs single-threaded, so a fixed seed yields bitwise-identical
//! results on a given machine.

mod act;
mod adam;
mod conv;
mod dense;
mod error;
mod gemm;
mod norm;
mod param;
mod tensor;

pub use act::{leaky_relu_backward, leaky_relu_inplace, sigmoid, sigmoid_inplace};
pub use adam::{Adam, AdamConfig};
pub use conv::{Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache};
pub use dense::{Dropout, DropoutMask, Linear, LinearCache};
pub use error::NnError;
pub use norm::{InstanceNorm, InstanceNormCache};
pub use param::{Param, ParamInit};
pub use tensor::Tensor;

/// Anything that owns trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
