//! Strided 2-D convolution and its transpose on NHWC tensors, both lowered to
//! a single batch-wide GEMM over an im2col patch matrix.
//!
//! A convolution gathers patches from the (large) input grid into the
//! (small) output grid; a transposed convolution scatters patches from the
//! small input grid into the large output grid. Both use [`PatchGeometry`]
//! with the large grid as `image` and the small grid as `grid`.

use rand::Rng;

use crate::gemm::gemm;
use crate::param::{Param, ParamInit};
use crate::{Module, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PatchGeometry {
    image_h: usize,
    image_w: usize,
    grid_h: usize,
    grid_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl PatchGeometry {
    #[inline]
    fn image_coord(&self, g: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (g * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    /// `cols[(b, gy, gx), (ky, kx, c)] = image[b, gy*s - p + ky, gx*s - p + kx, c]`, zero outside.
    fn gather(&self, image: &[f32], batch: usize, channels: usize) -> Vec<f32> {
        let k = self.kernel;
        let row_len = k * k * channels;
        let mut cols = vec![0.0f32; batch * self.grid_h * self.grid_w * row_len];
        let img_item = self.image_h * self.image_w * channels;
        for b in 0..batch {
            let img = &image[b * img_item..(b + 1) * img_item];
            for gy in 0..self.grid_h {
                for gx in 0..self.grid_w {
                    let row = ((b * self.grid_h + gy) * self.grid_w + gx) * row_len;
                    for ky in 0..k {
                        let Some(iy) = self.image_coord(gy, ky, self.image_h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = self.image_coord(gx, kx, self.image_w) else { continue };
                            let src = (iy * self.image_w + ix) * channels;
                            let dst = row + (ky * k + kx) * channels;
                            cols[dst..dst + channels].copy_from_slice(&img[src..src + channels]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`PatchGeometry::gather`]: accumulate patch rows back into the image.
    fn scatter_add(&self, cols: &[f32], image: &mut [f32], batch: usize, channels: usize) {
        let k = self.kernel;
        let row_len = k * k * channels;
        let img_item = self.image_h * self.image_w * channels;
        for b in 0..batch {
            let img = &mut image[b * img_item..(b + 1) * img_item];
            for gy in 0..self.grid_h {
                for gx in 0..self.grid_w {
                    let row = ((b * self.grid_h + gy) * self.grid_w + gx) * row_len;
                    for ky in 0..k {
                        let Some(iy) = self.image_coord(gy, ky, self.image_h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = self.image_coord(gx, kx, self.image_w) else { continue };
                            let dst = (iy * self.image_w + ix) * channels;
                            let src = row + (ky * k + kx) * channels;
                            for (d, s) in img[dst..dst + channels].iter_mut().zip(&cols[src..src + channels]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f32], bias: &[f32]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

fn accumulate_bias_grad(grad_out: &[f32], bias_grad: &mut [f32]) {
    for row in grad_out.chunks_exact(bias_grad.len()) {
        for (g, d) in bias_grad.iter_mut().zip(row) {
            *g += *d;
        }
    }
}

/// Square-kernel convolution. Padding may be asymmetric so that a stride-1
/// even kernel can keep the spatial size ("same" padding).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // [cout, k, k, cin]
    pub bias: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad_begin: usize,
    pad_end: usize,
}

#[derive(Debug)]
pub struct Conv2dCache {
    cols: Vec<f32>,
    input_shape: [usize; 4],
    geom: PatchGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_begin: usize,
        pad_end: usize,
        init: ParamInit,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), vec![out_channels, kernel, kernel, in_channels], init, rng),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], ParamInit::Zeros, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad_begin,
            pad_end,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let span = |x: usize| {
            let padded = x + self.pad_begin + self.pad_end;
            if padded < self.kernel {
                Err(NnError::Config(format!(
                    "{}: input extent {x} too small for kernel {}",
                    self.weight.name, self.kernel
                )))
            } else {
                Ok((padded - self.kernel) / self.stride + 1)
            }
        };
        Ok((span(h)?, span(w)?))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Conv2dCache), NnError> {
        if x.c() != self.in_channels {
            return Err(NnError::Shape {
                context: self.weight.name.clone(),
                expected: vec![self.in_channels],
                actual: vec![x.c()],
            });
        }
        let (oh, ow) = self.output_hw(x.h(), x.w())?;
        let geom = PatchGeometry {
            image_h: x.h(),
            image_w: x.w(),
            grid_h: oh,
            grid_w: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad_begin,
        };
        let cols = geom.gather(x.data(), x.n(), self.in_channels);
        let rows = x.n() * oh * ow;
        let k = self.kernel * self.kernel * self.in_channels;
        let mut out = vec![0.0f32; rows * self.out_channels];
        gemm(rows, k, self.out_channels, &cols, false, &self.weight.value, true, &mut out, 0.0);
        add_bias(&mut out, &self.bias.value);
        let y = Tensor::from_vec(x.n(), oh, ow, self.out_channels, out)?;
        Ok((
            y,
            Conv2dCache {
                cols,
                input_shape: x.shape(),
                geom,
            },
        ))
    }

    /// Returns the input gradient; parameter gradients are accumulated when `param_grads` is set.
    pub fn backward(&mut self, cache: Conv2dCache, grad_out: &Tensor, param_grads: bool) -> Tensor {
        let [n, h, w, cin] = cache.input_shape;
        let rows = n * cache.geom.grid_h * cache.geom.grid_w;
        let k = self.kernel * self.kernel * cin;
        assert_eq!(grad_out.data().len(), rows * self.out_channels, "conv backward shape");
        if param_grads {
            gemm(self.out_channels, rows, k, grad_out.data(), true, &cache.cols, false, &mut self.weight.grad, 1.0);
            accumulate_bias_grad(grad_out.data(), &mut self.bias.grad);
        }
        let mut dcols = cache.cols;
        gemm(rows, self.out_channels, k, grad_out.data(), false, &self.weight.value, false, &mut dcols, 0.0);
        let mut dx = Tensor::zeros(n, h, w, cin);
        cache.geom.scatter_add(&dcols, dx.data_mut(), n, cin);
        dx
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with symmetric cropping `pad`:
/// `out = (in - 1) * stride + kernel - 2 * pad`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param, // [cin, k, k, cout]
    pub bias: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
pub struct ConvTranspose2dCache {
    input: Tensor,
    geom: PatchGeometry,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: ParamInit,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), vec![in_channels, kernel, kernel, out_channels], init, rng),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], ParamInit::Zeros, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |x: usize| (x - 1) * self.stride + self.kernel - 2 * self.pad;
        (f(h), f(w))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvTranspose2dCache), NnError> {
        if x.c() != self.in_channels {
            return Err(NnError::Shape {
                context: self.weight.name.clone(),
                expected: vec![self.in_channels],
                actual: vec![x.c()],
            });
        }
        let (oh, ow) = self.output_hw(x.h(), x.w());
        let geom = PatchGeometry {
            image_h: oh,
            image_w: ow,
            grid_h: x.h(),
            grid_w: x.w(),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        let rows = x.n() * x.h() * x.w();
        let k = self.kernel * self.kernel * self.out_channels;
        let mut cols = vec![0.0f32; rows * k];
        gemm(rows, self.in_channels, k, x.data(), false, &self.weight.value, false, &mut cols, 0.0);
        let mut y = Tensor::zeros(x.n(), oh, ow, self.out_channels);
        geom.scatter_add(&cols, y.data_mut(), x.n(), self.out_channels);
        add_bias(y.data_mut(), &self.bias.value);
        Ok((
            y,
            ConvTranspose2dCache {
                input: x.clone(),
                geom,
            },
        ))
    }

    pub fn backward(&mut self, cache: ConvTranspose2dCache, grad_out: &Tensor, param_grads: bool) -> Tensor {
        let x = cache.input;
        let rows = x.n() * x.h() * x.w();
        let k = self.kernel * self.kernel * self.out_channels;
        let dcols = cache.geom.gather(grad_out.data(), x.n(), self.out_channels);
        if param_grads {
            gemm(self.in_channels, rows, k, x.data(), true, &dcols, false, &mut self.weight.grad, 1.0);
            accumulate_bias_grad(grad_out.data(), &mut self.bias.grad);
        }
        let mut dx = Tensor::zeros(x.n(), x.h(), x.w(), self.in_channels);
        gemm(rows, k, self.in_channels, &dcols, false, &self.weight.value, true, dx.data_mut(), 0.0);
        dx
    }
}

impl Module for ConvTranspose2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct NHWC convolution with explicit padding, used as an oracle.
    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.output_hw(x.h(), x.w()).unwrap();
        let k = conv.kernel;
        let mut y = Tensor::zeros(x.n(), oh, ow, conv.out_channels);
        for b in 0..x.n() {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..conv.out_channels {
                        let mut s = conv.bias.value[co] as f64;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.pad_begin as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.pad_begin as isize;
                                if iy < 0 || ix < 0 || iy >= x.h() as isize || ix >= x.w() as isize {
                                    continue;
                                }
                                for ci in 0..conv.in_channels {
                                    let wv = conv.weight.value[((co * k + ky) * k + kx) * conv.in_channels + ci];
                                    let xv = x.data()[((b * x.h() + iy as usize) * x.w() + ix as usize) * x.c() + ci];
                                    s += wv as f64 * xv as f64;
                                }
                            }
                        }
                        y.data_mut()[((b * oh + oy) * ow + ox) * conv.out_channels + co] = s as f32;
                    }
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor {
        let data = (0..n * h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Tensor::from_vec(n, h, w, c, data).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, pb, pe) in &[(2, 1, 1), (1, 1, 2)] {
            let conv = Conv2d::new("c", 3, 5, 4, stride, pb, pe, ParamInit::Normal(0.3), &mut rng);
            let x = random_tensor(&mut rng, 2, 8, 6, 3);
            let (y, _) = conv.forward(&x).unwrap();
            let r = naive_conv(&conv, &x);
            assert_eq!(y.shape(), r.shape());
            for (a, b) in y.data().iter().zip(r.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn same_padding_stride_one_keeps_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::new("c", 2, 1, 4, 1, 1, 2, ParamInit::Normal(0.1), &mut rng);
        assert_eq!(conv.output_hw(4, 4).unwrap(), (4, 4));
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> when both share weights and have no bias.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new("c", 3, 4, 4, 2, 1, 1, ParamInit::Normal(0.2), &mut rng);
        let mut convt = ConvTranspose2d::new("t", 4, 3, 4, 2, 1, ParamInit::Zeros, &mut rng);
        // conv weight [cout=4, k, k, cin=3] equals convT weight [cin=4, k, k, cout=3].
        convt.weight.value = conv.weight.value.clone();
        let x = random_tensor(&mut rng, 2, 8, 8, 3);
        let y = random_tensor(&mut rng, 2, 4, 4, 4);
        let (cx, _) = conv.forward(&x).unwrap();
        let (ty, _) = convt.forward(&y).unwrap();
        assert_eq!(ty.shape(), x.shape());
        assert!((dot(&cx, &y) - dot(&x, &ty)).abs() < 1e-4);
    }

    fn finite_diff_check<F>(x: &Tensor, analytic: &Tensor, mut f: F)
    where
        F: FnMut(&Tensor) -> f64,
    {
        let eps = 1e-2f32;
        for idx in (0..x.data().len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps as f64);
            let an = analytic.data()[idx] as f64;
            assert!((fd - an).abs() < 2e-3 * (1.0 + an.abs()), "idx {idx}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::new("c", 2, 3, 4, 2, 1, 1, ParamInit::Normal(0.3), &mut rng);
        let x = random_tensor(&mut rng, 2, 6, 6, 2);
        let probe = random_tensor(&mut rng, 2, 3, 3, 3);
        let (_, cache) = conv.forward(&x).unwrap();
        let dx = conv.backward(cache, &probe, true);
        let c2 = conv.clone();
        finite_diff_check(&x, &dx, |xx| dot(&c2.forward(xx).unwrap().0, &probe));

        // weight gradient
        let w_grad = conv.weight.grad.clone();
        for idx in (0..w_grad.len()).step_by(5) {
            let mut cp = conv.clone();
            cp.weight.value[idx] += 1e-2;
            let mut cm = conv.clone();
            cm.weight.value[idx] -= 1e-2;
            let fd = (dot(&cp.forward(&x).unwrap().0, &probe) - dot(&cm.forward(&x).unwrap().0, &probe)) / 2e-2;
            assert!((fd - w_grad[idx] as f64).abs() < 2e-3 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn conv_transpose_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut convt = ConvTranspose2d::new("t", 3, 2, 4, 2, 1, ParamInit::Normal(0.3), &mut rng);
        let x = random_tensor(&mut rng, 2, 3, 3, 3);
        let probe = random_tensor(&mut rng, 2, 6, 6, 2);
        let (_, cache) = convt.forward(&x).unwrap();
        let dx = convt.backward(cache, &probe, true);
        let c2 = convt.clone();
        finite_diff_check(&x, &dx, |xx| dot(&c2.forward(xx).unwrap().0, &probe));

        let w_grad = convt.weight.grad.clone();
        for idx in (0..w_grad.len()).step_by(5) {
            let mut cp = convt.clone();
            cp.weight.value[idx] += 1e-2;
            let mut cm = convt.clone();
            cm.weight.value[idx] -= 1e-2;
            let fd = (dot(&cp.forward(&x).unwrap().0, &probe) - dot(&cm.forward(&x).unwrap().0, &probe)) / 2e-2;
            assert!((fd - w_grad[idx] as f64).abs() < 2e-3 * (1.0 + fd.abs()));
        }
        let b_sum: f32 = convt.bias.grad.iter().sum();
        let p_sum: f32 = probe.data().iter().sum();
        assert!((b_sum - p_sum).abs() < 1e-4);
    }
}
