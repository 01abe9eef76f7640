//! Adversarially learned reconstruction-error classifier trained with focal
//! loss. A generator maps Gaussian noise to fake PMSRE vectors; the
//! discriminator learns to tell them from real (normal) ones and provides the
//! region score `1 - D(e)`.

use std::fmt::Write as _;
use std::path::Path;

use ocvad_nn::{leaky_relu_backward, leaky_relu_inplace, Adam, AdamConfig, Dropout, DropoutMask, Linear, LinearCache};
use ocvad_nn::{Module, Param, ParamInit, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{ensure, Error, Result};
use crate::gardin::lr_at_epoch;
use crate::pmsre::{PmsreVector, PMSRE_LEN};
use crate::rng::{streams, substream};

pub const CHECKPOINT_KIND: &str = "alrec";
pub const LEAKY_SLOPE: f32 = 0.2;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            generator_hidden: vec![64, 128, 128, 256, 256],
            discriminator_hidden: vec![256, 256, 128, 128, 64],
            dropout: 0.3,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.noise_dim >= 1, || "alrec.classifier.noise_dim must be >= 1".into())?;
        ensure(
            self.generator_hidden.iter().chain(&self.discriminator_hidden).all(|&w| w >= 1),
            || "alrec.classifier: hidden widths must be >= 1".into(),
        )?;
        ensure((0.0..1.0).contains(&self.dropout), || "alrec.classifier.dropout must be in [0, 1)".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self { alpha: 0.1, gamma: 10.0 }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.alpha > 0.0 && self.alpha.is_finite(), || "focal.alpha must be > 0".into())?;
        ensure(self.gamma >= 0.0 && self.gamma.is_finite(), || "focal.gamma must be >= 0".into())
    }
}

/// `-α (1-p)^γ log p`, with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(p: f64, params: &FocalLossParams) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -params.alpha * (1.0 - p).powf(params.gamma) * p.ln()
}

/// `ln σ(z)`, stable for large `|z|`.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `d FL(σ(z)) / dz = α[γ (1-p)^γ p ln p - (1-p)^{γ+1}]`.
fn focal_grad_logit(z: f64, params: &FocalLossParams) -> f64 {
    let p = sigmoid(z);
    let q = sigmoid(-z);
    params.alpha * (params.gamma * q.powf(params.gamma) * p * log_sigmoid(z) - q.powf(params.gamma + 1.0))
}

/// Discriminator objective on probabilities: mean focal loss of `D(e)` on
/// real vectors (target smoothed to `real_label`) plus mean focal loss of
/// `1 - D(G(z))` on fakes.
pub fn discriminator_objective(real_p: &[f64], fake_p: &[f64], params: &FocalLossParams, real_label: f64) -> f64 {
    let real = real_p
        .iter()
        .map(|&p| real_label * focal_loss(p, params) + (1.0 - real_label) * focal_loss(1.0 - p, params))
        .sum::<f64>()
        / real_p.len() as f64;
    let fake = fake_p.iter().map(|&p| focal_loss(1.0 - p, params)).sum::<f64>() / fake_p.len() as f64;
    real + fake
}

/// Dense stack with leaky ReLU and dropout between hidden layers and a
/// linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    dropout: Dropout,
}

pub struct MlpCache {
    linear: Vec<LinearCache>,
    activations: Vec<Tensor>,
    masks: Vec<DropoutMask>,
}

impl Mlp {
    fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: &[usize], output: usize, dropout: f64, rng: &mut R) -> Self {
        let widths: Vec<usize> = std::iter::once(input).chain(hidden.iter().copied()).chain([output]).collect();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let init = ParamInit::GlorotUniform {
                    fan_in: w[0],
                    fan_out: w[1],
                };
                Linear::new(&format!("{name}.dense{i}"), w[0], w[1], init, rng)
            })
            .collect();
        Self {
            layers,
            dropout: Dropout::new(dropout as f32),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_features()
    }

    /// Training mode when `rng` is given (dropout active).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor, mut rng: Option<&mut R>) -> Result<(Tensor, MlpCache)> {
        let mut cache = MlpCache {
            linear: Vec::with_capacity(self.layers.len()),
            activations: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (mut out, c) = layer.forward(&h)?;
            cache.linear.push(c);
            if i < last {
                leaky_relu_inplace(out.data_mut(), LEAKY_SLOPE);
                cache.activations.push(out.clone());
                cache.masks.push(self.dropout.forward(&mut out, rng.as_deref_mut()));
            }
            h = out;
        }
        Ok((h, cache))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward::<ChaCha8Rng>(x, None)?.0)
    }

    pub fn backward(&mut self, cache: MlpCache, grad_out: &Tensor, param_grads: bool) -> Tensor {
        let MlpCache {
            mut linear,
            mut activations,
            mut masks,
        } = cache;
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                self.dropout.backward(masks.pop().expect("mask per hidden layer"), &mut g);
                let act = activations.pop().expect("activation per hidden layer");
                leaky_relu_backward(act.data(), g.data_mut(), LEAKY_SLOPE);
            }
            g = self.layers[i].backward(linear.pop().expect("cache per layer"), &g, param_grads);
        }
        g
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Per-component affine map `(e - mean) / std` fitted on training vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; PMSRE_LEN],
    pub std: [f64; PMSRE_LEN],
}

impl FeatureScaler {
    /// Components with (near) zero spread keep unit scale.
    pub fn fit(e: &[PmsreVector]) -> Result<Self> {
        ensure(!e.is_empty(), || "cannot fit a feature scaler on no vectors".into())?;
        let n = e.len() as f64;
        let mut mean = [0.0; PMSRE_LEN];
        let mut std = [0.0; PMSRE_LEN];
        for k in 0..PMSRE_LEN {
            mean[k] = e.iter().map(|v| v.0[k]).sum::<f64>() / n;
            let var = e.iter().map(|v| (v.0[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, e: &PmsreVector) -> PmsreVector {
        PmsreVector(std::array::from_fn(|k| (e.0[k] - self.mean[k]) / self.std[k]))
    }
}

/// Generator `G: noise → e` and discriminator `D: e → logit`.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    spec: ClassifierSpec,
    pub generator: Mlp,
    pub discriminator: Mlp,
    /// Applied to every vector before `D`; `G` works in the scaled space.
    pub scaler: Option<FeatureScaler>,
}

impl ClassifierModel {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Mlp::new("alrec_g", spec.noise_dim, &spec.generator_hidden, PMSRE_LEN, spec.dropout, &mut rng);
        let discriminator = Mlp::new("alrec_d", PMSRE_LEN, &spec.discriminator_hidden, 1, spec.dropout, &mut rng);
        Ok(Self {
            spec,
            generator,
            discriminator,
            scaler: None,
        })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    /// `D(e)` for each row, dropout disabled.
    pub fn discriminate(&self, e: &[PmsreVector]) -> Result<Vec<f64>> {
        if e.is_empty() {
            return Ok(Vec::new());
        }
        let logits = match &self.scaler {
            Some(sc) => {
                let scaled: Vec<PmsreVector> = e.iter().map(|v| sc.apply(v)).collect();
                self.discriminator.predict(&vectors_to_tensor(&scaled))?
            }
            None => self.discriminator.predict(&vectors_to_tensor(e))?,
        };
        Ok(logits.data().iter().map(|&z| sigmoid(z as f64)).collect())
    }

    /// Fake vectors `G(z)` for noise rows `z`, dropout disabled.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.predict(z)
    }

    fn all_params(&self) -> Vec<&Param> {
        let mut p = self.generator.params();
        p.extend(self.discriminator.params());
        p
    }

    fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.generator.params_mut();
        p.extend(self.discriminator.params_mut());
        p
    }

    pub fn all_finite(&self) -> bool {
        self.all_params().iter().all(|p| p.all_finite())
    }
}

fn vectors_to_tensor(e: &[PmsreVector]) -> Tensor {
    let data = e.iter().flat_map(|v| v.0.iter().map(|&x| x as f32)).collect();
    Tensor::from_rows(e.len(), PMSRE_LEN, data).expect("row layout")
}

/// Probability that a PMSRE vector is normal.
pub trait NormalityModel {
    fn prob_normal(&self, e: &PmsreVector) -> Result<f64>;
}

impl NormalityModel for ClassifierModel {
    fn prob_normal(&self, e: &PmsreVector) -> Result<f64> {
        Ok(self.discriminate(std::slice::from_ref(e))?[0])
    }
}

impl<F: Fn(&PmsreVector) -> f64> NormalityModel for F {
    fn prob_normal(&self, e: &PmsreVector) -> Result<f64> {
        Ok(self(e))
    }
}

/// Region abnormality score `s_e = 1 - D(e)`.
pub fn score_region<M: NormalityModel + ?Sized>(model: &M, e: &[f64]) -> Result<f64> {
    let e = PmsreVector::from_slice(e)?;
    Ok(1.0 - model.prob_normal(&e)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlrecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_every: usize,
    pub decay_power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub real_label: f64,
    /// Standardize each PMSRE component with training statistics.
    pub standardize: bool,
    pub classifier: ClassifierSpec,
}

impl Default for AlrecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-4,
            decay_every: 10,
            decay_power: 2.0,
            beta1: 0.5,
            beta2: 0.999,
            real_label: 0.9,
            standardize: false,
            classifier: ClassifierSpec::default(),
        }
    }
}

impl AlrecTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.epochs >= 1, || "alrec.epochs must be >= 1".into())?;
        ensure(self.batch_size >= 1, || "alrec.batch_size must be >= 1".into())?;
        ensure(self.learning_rate > 0.0 && self.learning_rate.is_finite(), || "alrec.learning_rate must be > 0".into())?;
        ensure(self.decay_every >= 1, || "alrec.decay_every must be >= 1".into())?;
        ensure((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), || "alrec: betas must be in [0, 1)".into())?;
        ensure((0.5..=1.0).contains(&self.real_label), || "alrec.real_label must be in [0.5, 1]".into())?;
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlrecEpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Mean `D(e)` on real and generated vectors.
    pub d_real: f64,
    pub d_fake: f64,
}

impl AlrecEpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,d_loss,g_loss,d_real,d_fake";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.lr, self.d_loss, self.g_loss, self.d_real, self.d_fake
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlrecTrainReport {
    pub epochs: Vec<AlrecEpochLog>,
}

impl AlrecTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(AlrecEpochLog::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            writeln!(s, "{}", e.csv_row()).unwrap();
        }
        s
    }
}

fn noise<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_rows(n, dim, data).expect("row layout")
}

struct Step {
    d_loss: f64,
    g_loss: f64,
    d_real: f64,
    d_fake: f64,
}

fn train_step(
    model: &mut ClassifierModel,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    real: &Tensor,
    cfg: &AlrecTrainConfig,
    focal: &FocalLossParams,
    lr: f32,
    noise_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<Step> {
    let n = real.n();
    let z = noise(n, cfg.classifier.noise_dim, noise_rng);
    let (fake, g_cache) = model.generator.forward(&z, Some(&mut *dropout_rng))?;

    // Discriminator: real vectors toward 1 (smoothed), fakes toward 0.
    model.discriminator.zero_grad();
    let (real_logits, real_cache) = model.discriminator.forward(real, Some(&mut *dropout_rng))?;
    let (fake_logits, fake_cache) = model.discriminator.forward(&fake, Some(&mut *dropout_rng))?;
    let y = cfg.real_label;
    let mut d_loss = 0.0;
    let mut grad_real = Tensor::zeros(n, 1, 1, 1);
    let mut grad_fake = Tensor::zeros(n, 1, 1, 1);
    let (mut d_real, mut d_fake) = (0.0, 0.0);
    for i in 0..n {
        let zr = real_logits.data()[i] as f64;
        let zf = fake_logits.data()[i] as f64;
        let (pr, pf) = (sigmoid(zr), sigmoid(zf));
        d_real += pr;
        d_fake += pf;
        d_loss += y * focal_loss(pr, focal) + (1.0 - y) * focal_loss(1.0 - pr, focal) + focal_loss(1.0 - pf, focal);
        grad_real.data_mut()[i] =
            ((y * focal_grad_logit(zr, focal) - (1.0 - y) * focal_grad_logit(-zr, focal)) / n as f64) as f32;
        grad_fake.data_mut()[i] = (-focal_grad_logit(-zf, focal) / n as f64) as f32;
    }
    model.discriminator.backward(real_cache, &grad_real, true);
    model.discriminator.backward(fake_cache, &grad_fake, true);
    opt_d.step(&mut model.discriminator, lr);

    // Generator: non-saturating, pushes D(G(z)) toward 1 through a fixed D.
    model.generator.zero_grad();
    let (logits, cache) = model.discriminator.forward(&fake, Some(&mut *dropout_rng))?;
    let mut g_loss = 0.0;
    let mut grad = Tensor::zeros(n, 1, 1, 1);
    for i in 0..n {
        let z = logits.data()[i] as f64;
        g_loss += focal_loss(sigmoid(z), focal);
        grad.data_mut()[i] = (focal_grad_logit(z, focal) / n as f64) as f32;
    }
    let grad_fake_e = model.discriminator.backward(cache, &grad, false);
    model.generator.backward(g_cache, &grad_fake_e, true);
    opt_g.step(&mut model.generator, lr);

    let n = n as f64;
    Ok(Step {
        d_loss: d_loss / n,
        g_loss: g_loss / n,
        d_real: d_real / n,
        d_fake: d_fake / n,
    })
}

/// Trains a fresh classifier on PMSRE vectors of normal regions.
pub fn train_alrec(
    real_e: &[PmsreVector],
    cfg: &AlrecTrainConfig,
    focal: &FocalLossParams,
    seed: u64,
) -> Result<(ClassifierModel, AlrecTrainReport)> {
    cfg.validate()?;
    focal.validate()?;
    if real_e.is_empty() {
        return Err(Error::EmptyDataset("no PMSRE vectors to train the classifier on".into()));
    }
    let mut model = ClassifierModel::new(cfg.classifier.clone(), crate::rng::substream_seed(seed, streams::WEIGHT_INIT))?;
    let scaled: Vec<PmsreVector>;
    let real_e = if cfg.standardize {
        let sc = FeatureScaler::fit(real_e)?;
        model.scaler = Some(sc);
        scaled = real_e.iter().map(|v| sc.apply(v)).collect();
        &scaled[..]
    } else {
        real_e
    };
    let adam = AdamConfig {
        beta1: cfg.beta1 as f32,
        beta2: cfg.beta2 as f32,
        ..AdamConfig::default()
    };
    let mut opt_g = Adam::new(&model.generator, adam);
    let mut opt_d = Adam::new(&model.discriminator, adam);
    let mut shuffle_rng = substream(seed, streams::DATA_SHUFFLE);
    let mut noise_rng = substream(seed, streams::NOISE);
    let mut dropout_rng = substream(seed, streams::DROPOUT);

    let mut report = AlrecTrainReport::default();
    let mut order: Vec<usize> = (0..real_e.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.learning_rate, epoch, cfg.epochs, cfg.decay_every, cfg.decay_power);
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<PmsreVector> = idx.iter().map(|&i| real_e[i]).collect();
            let s = train_step(
                &mut model,
                &mut opt_g,
                &mut opt_d,
                &vectors_to_tensor(&batch),
                cfg,
                focal,
                lr as f32,
                &mut noise_rng,
                &mut dropout_rng,
            )?;
            for (name, v) in [("D focal loss", s.d_loss), ("G focal loss", s.g_loss)] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        term: name.into(),
                        epoch: epoch + 1,
                        batch: b,
                    });
                }
            }
            let w = idx.len() as f64;
            sums[0] += s.d_loss * w;
            sums[1] += s.g_loss * w;
            sums[2] += s.d_real * w;
            sums[3] += s.d_fake * w;
        }
        if !model.all_finite() {
            return Err(Error::NonFinite {
                term: "classifier parameters".into(),
                epoch: epoch + 1,
                batch: 0,
            });
        }
        let n = real_e.len() as f64;
        let log = AlrecEpochLog {
            epoch: epoch + 1,
            lr,
            d_loss: sums[0] / n,
            g_loss: sums[1] / n,
            d_real: sums[2] / n,
            d_fake: sums[3] / n,
        };
        log::debug!(
            "alrec epoch {}/{}: D {:.4e} G {:.4e} D(real) {:.3} D(fake) {:.3}",
            log.epoch,
            cfg.epochs,
            log.d_loss,
            log.g_loss,
            log.d_real,
            log.d_fake
        );
        report.epochs.push(log);
    }
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: ClassifierSpec,
    scaler: Option<FeatureScaler>,
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    let meta = Meta {
        spec: model.spec.clone(),
        scaler: model.scaler,
    };
    let meta = serde_json::to_value(&meta).expect("metadata serializes");
    checkpoint::write(path, CHECKPOINT_KIND, meta, &model.all_params())
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let c = checkpoint::read(path, CHECKPOINT_KIND)?;
    let meta: Meta = serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad classifier metadata: {e}", path.display())))?;
    let mut model = ClassifierModel::new(meta.spec, 0)?;
    c.restore(model.all_params_mut())?;
    model.scaler = meta.scaler;
    Ok(model)
}
