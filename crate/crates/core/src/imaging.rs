//! Pixel-level primitives: grayscale conversion, bilinear resizing, Sobel
//! gradient magnitude, SSIM, PSNR and the composite image distance used by
//! every reconstruction loss.
//!
//! All images are single-channel `f64` in `[0, 1]`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Single-channel intensity image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure(height >= 1 && width >= 1, || format!("image must be non-empty, got {height}x{width}"))?;
        ensure(data.len() == height * width, || {
            format!("image buffer has {} values, expected {}", data.len(), height * width)
        })?;
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Validation(format!("pixel {i} = {v} is outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Converts network output; values are clamped into `[0, 1]`.
    pub fn from_f32(height: usize, width: usize, data: &[f32]) -> Result<Self> {
        ensure(data.iter().all(|v| v.is_finite()), || "non-finite network output".to_string())?;
        Self::new(height, width, data.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the border (replicate padding).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.get(yy, xx)
    }

    /// Copy of the rows `y0..y1` and columns `x0..x1`.
    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<Self> {
        ensure(y0 < y1 && x0 < x1 && y1 <= self.height && x1 <= self.width, || {
            format!("crop [{y0},{y1})x[{x0},{x1}) outside {}x{}", self.height, self.width)
        })?;
        let mut data = Vec::with_capacity((y1 - y0) * (x1 - x0));
        for y in y0..y1 {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x1]);
        }
        Ok(Self {
            height: y1 - y0,
            width: x1 - x0,
            data,
        })
    }

    fn same_shape(&self, other: &GrayImage) -> Result<()> {
        ensure(self.height == other.height && self.width == other.width, || {
            format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )
        })
    }
}

/// Three-channel image, row-major `[r, g, b]` triples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 3]>,
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub fn to_grayscale(rgb: &RgbImage) -> Result<GrayImage> {
    ensure(rgb.data.len() == rgb.height * rgb.width, || "rgb buffer length mismatch".into())?;
    let mut out = Vec::with_capacity(rgb.data.len());
    for (i, px) in rgb.data.iter().enumerate() {
        if px.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::Validation(format!("rgb pixel {i} = {px:?} is outside [0, 1]")));
        }
        let l: f64 = px.iter().zip(LUMA_WEIGHTS).map(|(c, w)| c * w).sum();
        out.push(l.clamp(0.0, 1.0));
    }
    GrayImage::new(rgb.height, rgb.width, out)
}

/// Bilinear resize with half-pixel (center-aligned) sampling and edge clamping.
pub fn resize(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    ensure(out_h >= 1 && out_w >= 1, || format!("target size {out_h}x{out_w} must be positive"))?;
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let axis = |dst: usize, scale: f64, extent: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(out_h, out_w, data)
}

/// Largest Sobel magnitude attainable on `[0, 1]` inputs: `|Gx|, |Gy| <= 4`.
pub const SOBEL_NORMALIZER: f64 = 4.0 * std::f64::consts::SQRT_2;

/// Raw 3x3 Sobel responses `(gx, gy)` with replicate padding.
pub fn sobel_responses(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (img.height as isize, img.width as isize);
    let mut gx = Vec::with_capacity(img.len());
    let mut gy = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in 0..w {
            let p = |dy: isize, dx: isize| img.get_clamped(y + dy, x + dx);
            gx.push((p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)));
            gy.push((p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)));
        }
    }
    (gx, gy)
}

/// Gradient magnitude `sqrt(gx² + gy²) / (4√2)`, in `[0, 1]`.
pub fn sobel_gradient(img: &GrayImage) -> GrayImage {
    let (gx, gy) = sobel_responses(img);
    let data = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| ((a * a + b * b).sqrt() / SOBEL_NORMALIZER).min(1.0))
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// SSIM parameters: Gaussian window, stabilizing constants, dynamic range 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        self.k1 * self.k1
    }
    pub fn c2(&self) -> f64 {
        self.k2 * self.k2
    }

    /// Window side actually used for an `h x w` image: the configured window,
    /// shrunk to the largest odd size that fits when the image is smaller.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        let fit = self.window.min(h).min(w);
        if fit % 2 == 0 {
            fit - 1
        } else {
            fit
        }
    }

    /// Normalized 1-D Gaussian taps of length `size`.
    pub fn kernel(&self, size: usize) -> Vec<f64> {
        let c = (size as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }
}

/// Separable "valid" correlation of an `h x w` buffer with `k ⊗ k`.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let src_row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `oh x ow` map back onto `h x w`.
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let dst = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
            for (d, v) in dst.iter_mut().zip(&map[y * ow..(y + 1) * ow]) {
                *d += kv * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

struct SsimMaps {
    kernel: Vec<f64>,
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    s11: Vec<f64>,
    s22: Vec<f64>,
    s12: Vec<f64>,
}

fn ssim_maps(i1: &GrayImage, i2: &GrayImage, params: &SsimParams) -> SsimMaps {
    let (h, w) = (i1.height, i1.width);
    let kernel = params.kernel(params.effective_window(h, w));
    let f = |buf: &[f64]| filter_valid(buf, h, w, &kernel);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu1 = f(&i1.data);
    let mu2 = f(&i2.data);
    let e11 = f(&sq(&i1.data, &i1.data));
    let e22 = f(&sq(&i2.data, &i2.data));
    let e12 = f(&sq(&i1.data, &i2.data));
    let s11 = e11.iter().zip(&mu1).map(|(e, m)| e - m * m).collect();
    let s22 = e22.iter().zip(&mu2).map(|(e, m)| e - m * m).collect();
    let s12 = e12.iter().zip(mu1.iter().zip(&mu2)).map(|(e, (a, b))| e - a * b).collect();
    SsimMaps {
        kernel,
        mu1,
        mu2,
        s11,
        s22,
        s12,
    }
}

/// Mean SSIM over all fully contained Gaussian windows.
pub fn ssim(i1: &GrayImage, i2: &GrayImage) -> Result<f64> {
    ssim_with(i1, i2, &SsimParams::default())
}

pub fn ssim_with(i1: &GrayImage, i2: &GrayImage, params: &SsimParams) -> Result<f64> {
    i1.same_shape(i2)?;
    let m = ssim_maps(i1, i2, params);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..m.mu1.len())
        .map(|p| {
            let (a, b) = (m.mu1[p], m.mu2[p]);
            ((2.0 * a * b + c1) * (2.0 * m.s12[p] + c2)) / ((a * a + b * b + c1) * (m.s11[p] + m.s22[p] + c2))
        })
        .sum();
    Ok(total / m.mu1.len() as f64)
}

/// SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(i1: &GrayImage, i2: &GrayImage, params: &SsimParams) -> Result<(f64, Vec<f64>)> {
    i1.same_shape(i2)?;
    let (h, w) = (i1.height, i1.width);
    let m = ssim_maps(i1, i2, params);
    let (c1, c2) = (params.c1(), params.c2());
    let count = m.mu1.len() as f64;
    let mut alpha = vec![0.0; m.mu1.len()];
    let mut beta = vec![0.0; m.mu1.len()];
    let mut gamma = vec![0.0; m.mu1.len()];
    let mut total = 0.0;
    for p in 0..m.mu1.len() {
        let (mu1, mu2) = (m.mu1[p], m.mu2[p]);
        let a1 = 2.0 * mu1 * mu2 + c1;
        let a2 = 2.0 * m.s12[p] + c2;
        let b1 = mu1 * mu1 + mu2 * mu2 + c1;
        let b2 = m.s11[p] + m.s22[p] + c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let d_mu1 = 2.0 * mu2 * a2 / (b1 * b2) - s * 2.0 * mu1 / b1;
        let d_s11 = -s / b2;
        let d_s12 = 2.0 * a1 / (b1 * b2);
        alpha[p] = (d_mu1 - 2.0 * mu1 * d_s11 - mu2 * d_s12) / count;
        beta[p] = d_s11 / count;
        gamma[p] = d_s12 / count;
    }
    let ga = filter_valid_adjoint(&alpha, h, w, &m.kernel);
    let gb = filter_valid_adjoint(&beta, h, w, &m.kernel);
    let gc = filter_valid_adjoint(&gamma, h, w, &m.kernel);
    let grad = (0..h * w)
        .map(|q| ga[q] + 2.0 * i1.data[q] * gb[q] + i2.data[q] * gc[q])
        .collect();
    Ok((total / count, grad))
}

pub fn mse(i1: &GrayImage, i2: &GrayImage) -> Result<f64> {
    i1.same_shape(i2)?;
    Ok(i1.data.iter().zip(&i2.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / i1.len() as f64)
}

/// Peak signal-to-noise ratio for dynamic range 1; `+inf` for identical images.
pub fn psnr(i1: &GrayImage, i2: &GrayImage) -> Result<f64> {
    let e = mse(i1, i2)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

/// One term of the composite image distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistancePart {
    /// Mean absolute difference.
    L1,
    /// `(1/n) * sqrt(sum of squared differences)`.
    L2,
    /// `(1 - SSIM) / 2`.
    Ss,
    /// `10^(-PSNR/20)`, which is the RMSE for dynamic range 1.
    Nr,
}

impl DistancePart {
    pub const ALL: [DistancePart; 4] = [DistancePart::L1, DistancePart::L2, DistancePart::Ss, DistancePart::Nr];

    pub fn name(self) -> &'static str {
        match self {
            DistancePart::L1 => "l1",
            DistancePart::L2 => "l2",
            DistancePart::Ss => "ss",
            DistancePart::Nr => "nr",
        }
    }
}

impl FromStr for DistancePart {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(DistancePart::L1),
            "l2" => Ok(DistancePart::L2),
            "ss" | "ssim" => Ok(DistancePart::Ss),
            "nr" | "psnr" => Ok(DistancePart::Nr),
            other => Err(Error::Config(format!("unknown distance part `{other}`"))),
        }
    }
}

/// Non-empty set of distance terms. Displays and parses as `l1+l2+ss`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DistanceParts(BTreeSet<DistancePart>);

impl DistanceParts {
    pub fn new(parts: impl IntoIterator<Item = DistancePart>) -> Result<Self> {
        let set: BTreeSet<_> = parts.into_iter().collect();
        ensure(!set.is_empty(), || "distance parts must be non-empty".into())?;
        Ok(Self(set))
    }

    pub fn contains(&self, part: DistancePart) -> bool {
        self.0.contains(&part)
    }

    pub fn iter(&self) -> impl Iterator<Item = DistancePart> + '_ {
        self.0.iter().copied()
    }

    /// Every non-empty subset of the four terms.
    pub fn all_subsets() -> Vec<DistanceParts> {
        (1u8..16)
            .map(|mask| {
                DistanceParts(
                    DistancePart::ALL
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, p)| *p)
                        .collect(),
                )
            })
            .collect()
    }
}

impl Default for DistanceParts {
    fn default() -> Self {
        Self([DistancePart::L1, DistancePart::L2, DistancePart::Ss].into_iter().collect())
    }
}

impl fmt::Display for DistanceParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|p| p.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for DistanceParts {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(['+', ','])
            .filter(|t| !t.trim().is_empty())
            .map(DistancePart::from_str)
            .collect::<Result<Vec<_>>>()?;
        DistanceParts::new(parts).map_err(|_| Error::Config("distance parts must be non-empty".into()))
    }
}

impl TryFrom<String> for DistanceParts {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistanceParts> for String {
    fn from(p: DistanceParts) -> String {
        p.to_string()
    }
}

/// Composite distance: the sum of the selected terms.
pub fn distance(i1: &GrayImage, i2: &GrayImage, parts: &DistanceParts) -> Result<f64> {
    i1.same_shape(i2)?;
    let n = i1.len() as f64;
    let mut total = 0.0;
    let sq_sum = || i1.data.iter().zip(&i2.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    for part in parts.iter() {
        total += match part {
            DistancePart::L1 => i1.data.iter().zip(&i2.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
            DistancePart::L2 => sq_sum().sqrt() / n,
            DistancePart::Ss => (1.0 - ssim(i1, i2)?) / 2.0,
            DistancePart::Nr => (sq_sum() / n).sqrt(),
        };
    }
    Ok(total)
}

/// Distance and its gradient with respect to `generated` (the first argument).
pub fn distance_with_grad(generated: &GrayImage, target: &GrayImage, parts: &DistanceParts) -> Result<(f64, Vec<f64>)> {
    generated.same_shape(target)?;
    let n = generated.len() as f64;
    let diff: Vec<f64> = generated.data.iter().zip(&target.data).map(|(a, b)| a - b).collect();
    let sq_sum: f64 = diff.iter().map(|d| d * d).sum();
    let mut total = 0.0;
    let mut grad = vec![0.0; diff.len()];
    for part in parts.iter() {
        match part {
            DistancePart::L1 => {
                total += diff.iter().map(|d| d.abs()).sum::<f64>() / n;
                for (g, d) in grad.iter_mut().zip(&diff) {
                    if *d != 0.0 {
                        *g += d.signum() / n;
                    }
                }
            }
            DistancePart::L2 => {
                let root = sq_sum.sqrt();
                total += root / n;
                if root > 0.0 {
                    for (g, d) in grad.iter_mut().zip(&diff) {
                        *g += d / (n * root);
                    }
                }
            }
            DistancePart::Ss => {
                let (s, sg) = ssim_with_grad(generated, target, &SsimParams::default())?;
                total += (1.0 - s) / 2.0;
                for (g, v) in grad.iter_mut().zip(&sg) {
                    *g -= v / 2.0;
                }
            }
            DistancePart::Nr => {
                let rmse = (sq_sum / n).sqrt();
                total += rmse;
                if rmse > 0.0 {
                    for (g, d) in grad.iter_mut().zip(&diff) {
                        *g += d / (n * rmse);
                    }
                }
            }
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap()
    }

    fn rgb(h: usize, w: usize, px: [f64; 3]) -> RgbImage {
        RgbImage {
            height: h,
            width: w,
            data: vec![px; h * w],
        }
    }

    #[test]
    fn grayscale_examples() {
        assert!(to_grayscale(&rgb(2, 3, [1.0; 3])).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(to_grayscale(&rgb(2, 3, [0.0; 3])).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(to_grayscale(&rgb(2, 2, [1.0, 0.0, 0.0])).unwrap().data().iter().all(|v| (v - 0.299).abs() < 1e-12));
        assert!(to_grayscale(&rgb(1, 1, [f64::NAN, 0.0, 0.0])).is_err());
    }

    #[test]
    fn image_validation() {
        assert!(GrayImage::new(0, 4, vec![]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn resize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 64, 64);
        assert_eq!(resize(&img, 64, 64).unwrap(), img);

        let c = GrayImage::filled(128, 128, 0.3).unwrap();
        let r = resize(&c, 64, 64).unwrap();
        assert_eq!((r.height(), r.width()), (64, 64));
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-12));

        // Center of a 2x2 image sits between all four pixels.
        let checker = GrayImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let one = resize(&checker, 1, 1).unwrap();
        assert!((one.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(resize(&img, 0, 4).is_err());
    }

    #[test]
    fn sobel_of_constant_is_zero() {
        let g = sobel_gradient(&GrayImage::filled(64, 64, 0.7).unwrap());
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn sobel_of_horizontal_ramp() {
        let ramp = GrayImage::from_fn(64, 64, |_, x| x as f64 / 63.0).unwrap();
        let (gx, gy) = sobel_responses(&ramp);
        for y in 0..64 {
            for x in 1..63 {
                assert!((gx[y * 64 + x] - 8.0 / 63.0).abs() < 1e-12);
                assert!(gy[y * 64 + x].abs() < 1e-12);
            }
        }
        let mag = sobel_gradient(&ramp);
        assert!((mag.get(10, 10) - 8.0 / 63.0 / SOBEL_NORMALIZER).abs() < 1e-12);
    }

    #[test]
    fn sobel_of_single_pixel_stays_local() {
        let img = GrayImage::from_fn(16, 16, |y, x| if (y, x) == (7, 9) { 1.0 } else { 0.0 }).unwrap();
        let g = sobel_gradient(&img);
        // Direct convolution oracle: the magnitude at (y, x) is the kernel weight
        // seen from the bright pixel.
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        for y in 0..16usize {
            for x in 0..16usize {
                let (dy, dx) = (7 - y as isize, 9 - x as isize);
                let expected = if dy.abs() <= 1 && dx.abs() <= 1 {
                    let gx: f64 = kx[(dy + 1) as usize][(dx + 1) as usize];
                    let gy: f64 = kx[(dx + 1) as usize][(dy + 1) as usize];
                    (gx * gx + gy * gy).sqrt() / SOBEL_NORMALIZER
                } else {
                    0.0
                };
                assert!((g.get(y, x) - expected).abs() < 1e-12, "({y},{x})");
            }
        }
    }

    #[test]
    fn sobel_extreme_edge_hits_one() {
        // A diagonal step maximizes both responses simultaneously.
        let img = GrayImage::from_fn(8, 8, |y, x| if x > y { 1.0 } else { 0.0 }).unwrap();
        let g = sobel_gradient(&img);
        assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 64, 64);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);

        let c4 = GrayImage::filled(64, 64, 0.4).unwrap();
        let c6 = GrayImage::filled(64, 64, 0.6).unwrap();
        let expected = (0.48 + 1e-4) / (0.52 + 1e-4);
        assert!((ssim(&c4, &c6).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 0.92309).abs() < 1e-5);

        let b = random_image(&mut rng, 64, 64);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&a, &GrayImage::filled(32, 64, 0.1).unwrap()).is_err());
    }

    #[test]
    fn small_images_use_a_shrunken_window() {
        let p = SsimParams::default();
        assert_eq!(p.effective_window(64, 64), 11);
        assert_eq!(p.effective_window(8, 8), 7);
        assert_eq!(p.effective_window(8, 5), 5);
        let k = p.kernel(7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let z = GrayImage::filled(64, 64, 0.0).unwrap();
        let h = GrayImage::filled(64, 64, 0.5).unwrap();
        let l1 = DistanceParts::new([DistancePart::L1]).unwrap();
        let l2 = DistanceParts::new([DistancePart::L2]).unwrap();
        assert_eq!(distance(&z, &h, &l1).unwrap(), 0.5);
        assert_eq!(distance(&z, &h, &l2).unwrap(), 0.0078125);

        let c4 = GrayImage::filled(64, 64, 0.4).unwrap();
        let c6 = GrayImage::filled(64, 64, 0.6).unwrap();
        let ss = DistanceParts::new([DistancePart::Ss]).unwrap();
        let d = distance(&c4, &c6, &ss).unwrap();
        assert!((d - 0.038454).abs() < 1e-6, "{d}");

        let nr = DistanceParts::new([DistancePart::Nr]).unwrap();
        let d = distance(&c4, &c6, &nr).unwrap();
        let via_psnr = 10f64.powf(-psnr(&c4, &c6).unwrap() / 20.0);
        assert!((d - via_psnr).abs() < 1e-12);
        assert!(distance(&c4, &GrayImage::filled(8, 8, 0.0).unwrap(), &l1).is_err());
    }

    #[test]
    fn identical_images_have_zero_distance_for_every_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 32, 32);
        for parts in DistanceParts::all_subsets() {
            assert!(distance(&a, &a, &parts).unwrap().abs() < 1e-9, "{parts}");
        }
    }

    #[test]
    fn distance_parts_parse_and_display() {
        let p: DistanceParts = "ss+L1,l2".parse().unwrap();
        assert_eq!(p, DistanceParts::default());
        assert_eq!(p.to_string(), "l1+l2+ss");
        assert!("".parse::<DistanceParts>().is_err());
        assert!("l3".parse::<DistanceParts>().is_err());
        assert_eq!(DistanceParts::all_subsets().len(), 15);
    }

    #[test]
    fn distance_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = GrayImage::from_fn(8, 8, |_, _| rng.random_range(0.1..0.9)).unwrap();
        let t = GrayImage::from_fn(8, 8, |_, _| rng.random_range(0.1..0.9)).unwrap();
        for part in DistancePart::ALL {
            let parts = DistanceParts::new([part]).unwrap();
            let (_, grad) = distance_with_grad(&g, &t, &parts).unwrap();
            for q in 0..64 {
                let h = 1e-6;
                let mut plus = g.data().to_vec();
                plus[q] += h;
                let mut minus = g.data().to_vec();
                minus[q] -= h;
                let fp = distance(&GrayImage::new(8, 8, plus).unwrap(), &t, &parts).unwrap();
                let fm = distance(&GrayImage::new(8, 8, minus).unwrap(), &t, &parts).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - grad[q]).abs() / fd.abs().max(grad[q].abs()).max(1e-12);
                assert!(rel < 1e-4, "{part:?} pixel {q}: fd {fd} analytic {}", grad[q]);
            }
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_nonnegative(seed in any::<u64>(), mask in 1u8..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 16, 16);
            let b = random_image(&mut rng, 16, 16);
            let parts = &DistanceParts::all_subsets()[(mask - 1) as usize];
            let ab = distance(&a, &b, parts).unwrap();
            let ba = distance(&b, &a, parts).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn sobel_output_is_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_fn(12, 12, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 }).unwrap();
            prop_assert!(sobel_gradient(&img).data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
