//! U-Net generator and PatchGAN discriminator built from `ocvad_nn` layers.
//!
//! Layer order everywhere is convolution → instance norm → leaky ReLU. Output
//! layers skip both; normalization is also skipped where a layer's output is
//! 1x1 (instance statistics over a single pixel are degenerate).

use ocvad_nn::{
    leaky_relu_backward, leaky_relu_inplace, sigmoid_inplace, Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache,
    InstanceNorm, InstanceNormCache, Module, Param, ParamInit, Tensor,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const KERNEL: usize = 4;
pub const LEAKY_SLOPE: f32 = 0.2;
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub image_size: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            encoder_filters: vec![32, 64, 128, 256, 256, 256],
            decoder_filters: vec![256, 256, 128, 64, 32, 1],
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let depth = self.encoder_filters.len();
        ensure(depth >= 1 && depth == self.decoder_filters.len(), || {
            "generator encoder and decoder must have the same non-zero depth".into()
        })?;
        ensure(self.image_size % (1 << depth) == 0, || {
            format!("image size {} is not divisible by 2^{depth}", self.image_size)
        })?;
        ensure(self.decoder_filters[depth - 1] == 1, || "generator output layer must have 1 filter".into())?;
        ensure(
            self.encoder_filters.iter().chain(&self.decoder_filters).all(|&f| f >= 1),
            || "filter counts must be positive".into(),
        )
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.encoder_filters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub image_size: usize,
    pub filters: Vec<usize>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            filters: vec![32, 64, 128, 256],
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        let depth = self.filters.len();
        ensure(depth >= 1 && self.filters.iter().all(|&f| f >= 1), || "discriminator filters must be positive".into())?;
        ensure(self.image_size % (1 << depth) == 0, || {
            format!("image size {} is not divisible by 2^{depth}", self.image_size)
        })
    }

    /// Side of the square patch map.
    pub fn patch_size(&self) -> usize {
        self.image_size >> self.filters.len()
    }
}

#[derive(Debug, Clone)]
struct Block<L> {
    layer: L,
    norm: Option<InstanceNorm>,
}

enum LayerCache {
    Conv(Conv2dCache),
    Deconv(ConvTranspose2dCache),
}

struct BlockCache {
    layer: LayerCache,
    norm: Option<InstanceNormCache>,
}

/// U-Net generator mapping `[n, S, S, 1]` images in `[0,1]` to the same shape.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    encoder: Vec<Block<Conv2d>>,
    decoder: Vec<Block<ConvTranspose2d>>,
}

pub struct GeneratorCache {
    encoder: Vec<BlockCache>,
    encoder_out: Vec<Tensor>,
    decoder: Vec<BlockCache>,
    decoder_out: Vec<Tensor>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let depth = spec.encoder_filters.len();
        let mut encoder = Vec::with_capacity(depth);
        let mut in_c = 1;
        let mut size = spec.image_size;
        for (i, &f) in spec.encoder_filters.iter().enumerate() {
            size /= 2;
            let layer = Conv2d::new(&format!("{name}.enc{i}"), in_c, f, KERNEL, 2, 1, 1, ParamInit::Normal(INIT_STD), rng);
            let norm = (size > 1).then(|| InstanceNorm::new(&format!("{name}.enc{i}.norm"), f, rng));
            encoder.push(Block { layer, norm });
            in_c = f;
        }
        let mut decoder = Vec::with_capacity(depth);
        for (j, &f) in spec.decoder_filters.iter().enumerate() {
            let in_c = if j == 0 {
                spec.encoder_filters[depth - 1]
            } else {
                spec.decoder_filters[j - 1] + spec.encoder_filters[depth - 1 - j]
            };
            let layer = ConvTranspose2d::new(&format!("{name}.dec{j}"), in_c, f, KERNEL, 2, 1, ParamInit::Normal(INIT_STD), rng);
            let norm = (j + 1 < depth).then(|| InstanceNorm::new(&format!("{name}.dec{j}.norm"), f, rng));
            decoder.push(Block { layer, norm });
        }
        Ok(Self { spec, encoder, decoder })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, GeneratorCache)> {
        let s = self.spec.image_size;
        x.check_shape("generator input", [x.n(), s, s, 1])?;
        let depth = self.encoder.len();
        let mut encoder = Vec::with_capacity(depth);
        let mut encoder_out: Vec<Tensor> = Vec::with_capacity(depth);
        for (i, block) in self.encoder.iter().enumerate() {
            let input = if i == 0 { x } else { &encoder_out[i - 1] };
            let (mut y, lc) = block.layer.forward(input)?;
            let nc = match &block.norm {
                Some(norm) => {
                    let (yn, nc) = norm.forward(&y)?;
                    y = yn;
                    Some(nc)
                }
                None => None,
            };
            leaky_relu_inplace(y.data_mut(), LEAKY_SLOPE);
            encoder.push(BlockCache {
                layer: LayerCache::Conv(lc),
                norm: nc,
            });
            encoder_out.push(y);
        }
        let mut decoder = Vec::with_capacity(depth);
        let mut decoder_out: Vec<Tensor> = Vec::with_capacity(depth);
        for (j, block) in self.decoder.iter().enumerate() {
            let (mut y, lc) = if j == 0 {
                block.layer.forward(&encoder_out[depth - 1])?
            } else {
                let cat = Tensor::concat_channels(&decoder_out[j - 1], &encoder_out[depth - 1 - j]);
                block.layer.forward(&cat)?
            };
            let nc = match &block.norm {
                Some(norm) => {
                    let (yn, nc) = norm.forward(&y)?;
                    y = yn;
                    Some(nc)
                }
                None => None,
            };
            if j + 1 < depth {
                leaky_relu_inplace(y.data_mut(), LEAKY_SLOPE);
            } else {
                sigmoid_inplace(y.data_mut());
            }
            decoder.push(BlockCache {
                layer: LayerCache::Deconv(lc),
                norm: nc,
            });
            decoder_out.push(y);
        }
        let out = decoder_out.last().expect("non-empty decoder").clone();
        Ok((
            out,
            GeneratorCache {
                encoder,
                encoder_out,
                decoder,
                decoder_out,
            },
        ))
    }

    /// Inference-only forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Backpropagates `grad_out` (w.r.t. the sigmoid output) and returns the
    /// gradient w.r.t. the input image. Parameter gradients accumulate.
    pub fn backward(&mut self, cache: GeneratorCache, grad_out: &Tensor) -> Tensor {
        let depth = self.encoder.len();
        let GeneratorCache {
            encoder: enc_caches,
            encoder_out,
            decoder: dec_caches,
            decoder_out,
        } = cache;
        let mut enc_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        let add_to = |slot: &mut Option<Tensor>, g: Tensor| match slot {
            Some(acc) => acc.add_assign(&g),
            None => *slot = Some(g),
        };

        let out = &decoder_out[depth - 1];
        let mut d = grad_out.clone();
        for (g, y) in d.data_mut().iter_mut().zip(out.data()) {
            *g *= y * (1.0 - y);
        }
        for (j, bc) in dec_caches.into_iter().enumerate().rev() {
            let block = &mut self.decoder[j];
            if j + 1 < depth {
                leaky_relu_backward(decoder_out[j].data(), d.data_mut(), LEAKY_SLOPE);
            }
            if let (Some(norm), Some(nc)) = (block.norm.as_mut(), bc.norm) {
                d = norm.backward(nc, &d, true);
            }
            let LayerCache::Deconv(lc) = bc.layer else { unreachable!("decoder holds deconvolutions") };
            let dx = block.layer.backward(lc, &d, true);
            if j == 0 {
                add_to(&mut enc_grads[depth - 1], dx);
            } else {
                let (dprev, dskip) = dx.split_channels(self.spec.decoder_filters[j - 1]);
                add_to(&mut enc_grads[depth - 1 - j], dskip);
                d = dprev;
            }
        }
        let mut input_grad = None;
        for (i, bc) in enc_caches.into_iter().enumerate().rev() {
            let block = &mut self.encoder[i];
            let mut d = enc_grads[i].take().expect("every encoder output receives a gradient");
            leaky_relu_backward(encoder_out[i].data(), d.data_mut(), LEAKY_SLOPE);
            if let (Some(norm), Some(nc)) = (block.norm.as_mut(), bc.norm) {
                d = norm.backward(nc, &d, true);
            }
            let LayerCache::Conv(lc) = bc.layer else { unreachable!("encoder holds convolutions") };
            let dx = block.layer.backward(lc, &d, true);
            if i == 0 {
                input_grad = Some(dx);
            } else {
                add_to(&mut enc_grads[i - 1], dx);
            }
        }
        input_grad.expect("encoder is non-empty")
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for b in &self.encoder {
            v.extend(b.layer.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        for b in &self.decoder {
            v.extend(b.layer.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.encoder {
            v.extend(b.layer.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        for b in &mut self.decoder {
            v.extend(b.layer.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        v
    }
}

/// PatchGAN discriminator producing a `[n, P, P, 1]` map of logits.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    blocks: Vec<Block<Conv2d>>,
    head: Conv2d,
}

pub struct DiscriminatorCache {
    blocks: Vec<BlockCache>,
    outputs: Vec<Tensor>,
    head: Conv2dCache,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.filters.len());
        let mut in_c = 1;
        let mut size = spec.image_size;
        for (i, &f) in spec.filters.iter().enumerate() {
            size /= 2;
            let layer = Conv2d::new(&format!("{name}.conv{i}"), in_c, f, KERNEL, 2, 1, 1, ParamInit::Normal(INIT_STD), rng);
            let norm = (size > 1).then(|| InstanceNorm::new(&format!("{name}.conv{i}.norm"), f, rng));
            blocks.push(Block { layer, norm });
            in_c = f;
        }
        // Stride-1 "same" padding for an even kernel: one before, two after.
        let head = Conv2d::new(&format!("{name}.head"), in_c, 1, KERNEL, 1, 1, 2, ParamInit::Normal(INIT_STD), rng);
        Ok(Self { spec, blocks, head })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Returns patch logits; apply a sigmoid for probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DiscriminatorCache)> {
        let s = self.spec.image_size;
        x.check_shape("discriminator input", [x.n(), s, s, 1])?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let (mut y, lc) = block.layer.forward(input)?;
            let nc = match &block.norm {
                Some(norm) => {
                    let (yn, nc) = norm.forward(&y)?;
                    y = yn;
                    Some(nc)
                }
                None => None,
            };
            leaky_relu_inplace(y.data_mut(), LEAKY_SLOPE);
            caches.push(BlockCache {
                layer: LayerCache::Conv(lc),
                norm: nc,
            });
            outputs.push(y);
        }
        let (logits, head) = self.head.forward(outputs.last().expect("non-empty"))?;
        Ok((
            logits,
            DiscriminatorCache {
                blocks: caches,
                outputs,
                head,
            },
        ))
    }

    /// Patch probabilities for inference.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let (mut y, _) = self.forward(x)?;
        sigmoid_inplace(y.data_mut());
        Ok(y)
    }

    /// Backpropagates logit gradients to the input image. When
    /// `param_grads` is false the discriminator acts as a fixed critic.
    pub fn backward(&mut self, cache: DiscriminatorCache, grad_logits: &Tensor, param_grads: bool) -> Tensor {
        let mut d = self.head.backward(cache.head, grad_logits, param_grads);
        for (i, bc) in cache.blocks.into_iter().enumerate().rev() {
            let block = &mut self.blocks[i];
            leaky_relu_backward(cache.outputs[i].data(), d.data_mut(), LEAKY_SLOPE);
            if let (Some(norm), Some(nc)) = (block.norm.as_mut(), bc.norm) {
                d = norm.backward(nc, &d, param_grads);
            }
            let LayerCache::Conv(lc) = bc.layer else { unreachable!("discriminator holds convolutions") };
            d = block.layer.backward(lc, &d, param_grads);
        }
        d
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend(b.layer.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.layer.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }
}
