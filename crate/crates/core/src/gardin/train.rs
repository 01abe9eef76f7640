//! Alternating discriminator/generator optimization of the cross-domain GAN.

use ocvad_nn::{sigmoid, Adam, AdamConfig, Module, Tensor};
use serde::{Deserialize, Serialize};

use super::losses::{LossTerm, LossTerms, ReconstructionLosses, PROB_CLAMP};
use super::{images_to_tensor, Discriminator, DiscriminatorSpec, GardinModel, GeneratorSpec};
use crate::dataset::{PairStream, RegionPair};
use crate::error::{ensure, Error, Result};
use crate::imaging::{distance_with_grad, DistanceParts, GrayImage};
use crate::rng::{streams, substream_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GardinTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate is recomputed every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_power: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Target used for real samples in discriminator updates.
    pub real_label: f64,
    pub distance: DistanceParts,
    pub losses: LossTerms,
    /// Number of leading training pairs used as the fixed probe batch.
    pub probe_size: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for GardinTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-2,
            decay_every: 25,
            decay_power: 2.0,
            beta1: 0.5,
            beta2: 0.999,
            real_label: 0.9,
            distance: DistanceParts::default(),
            losses: LossTerms::default(),
            probe_size: 64,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl GardinTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.epochs >= 1, || "gardin.epochs must be >= 1".into())?;
        ensure(self.batch_size >= 1, || "gardin.batch_size must be >= 1".into())?;
        ensure(self.learning_rate > 0.0 && self.learning_rate.is_finite(), || {
            "gardin.learning_rate must be > 0".into()
        })?;
        ensure(self.decay_every >= 1, || "gardin.decay_every must be >= 1".into())?;
        ensure((0.0..=1.0).contains(&self.real_label), || "gardin.real_label must be in [0, 1]".into())?;
        ensure(self.probe_size >= 1, || "gardin.probe_size must be >= 1".into())?;
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

/// `lr0 * (1 - b / total)^power` where `b` is `epoch` rounded down to a
/// multiple of `every`; piecewise constant and non-increasing.
pub fn lr_at_epoch(lr0: f64, epoch: usize, total: usize, every: usize, power: f64) -> f64 {
    let boundary = (epoch / every) * every;
    let frac = 1.0 - boundary as f64 / total as f64;
    lr0 * frac.max(0.0).powf(power)
}

/// Per-epoch means of every loss term, plus the probe-batch `L_GAC` after the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_as: f64,
    pub l_sa: f64,
    pub l_a: f64,
    pub l_s: f64,
    pub l_gac: f64,
    /// Discriminator binary cross-entropy (smoothed real targets).
    pub d_s_loss: f64,
    pub d_a_loss: f64,
    /// Non-saturating generator adversarial loss, summed over both domains.
    pub g_adv: f64,
    pub probe_gac: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,l_as,l_sa,l_a,l_s,l_gac,d_s_loss,d_a_loss,g_adv,probe_gac";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.epoch,
            self.lr,
            self.l_as,
            self.l_sa,
            self.l_a,
            self.l_s,
            self.l_gac,
            self.d_s_loss,
            self.d_a_loss,
            self.g_adv,
            self.probe_gac
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GardinTrainReport {
    /// Probe-batch `L_GAC` of the freshly initialized model.
    pub initial_probe_gac: f64,
    pub epochs: Vec<EpochLog>,
}

impl GardinTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(EpochLog::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&e.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Mean composite distance over a batch and its gradient w.r.t. `generated`.
fn batch_distance(generated: &Tensor, targets: &[&GrayImage], parts: &DistanceParts) -> Result<(f64, Tensor)> {
    let n = generated.n();
    let mut grad = Tensor::zeros(n, generated.h(), generated.w(), 1);
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let g = GrayImage::from_f32(generated.h(), generated.w(), generated.item(i))?;
        let (d, dg) = distance_with_grad(&g, target, parts)?;
        total += d;
        for (o, v) in grad.item_mut(i).iter_mut().zip(&dg) {
            *o = (*v / n as f64) as f32;
        }
    }
    Ok((total / n as f64, grad))
}

/// Binary cross-entropy on patch logits against a constant target.
/// Returns the clamped loss value and the logit gradient of the mean loss.
fn bce_logits(logits: &Tensor, target: f64) -> (f64, Tensor) {
    let count = logits.data().len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (g, &z) in grad.data_mut().iter_mut().zip(logits.data()) {
        let p = sigmoid(z) as f64;
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= target * pc.ln() + (1.0 - target) * (1.0 - pc).ln();
        *g = ((p - target) / count) as f32;
    }
    (loss / count, grad)
}

fn discriminator_step(d: &mut Discriminator, real: &Tensor, fake: &Tensor, real_label: f64) -> Result<f64> {
    let (logits, cache) = d.forward(real)?;
    let (l_real, g) = bce_logits(&logits, real_label);
    d.backward(cache, &g, true);
    let (logits, cache) = d.forward(fake)?;
    let (l_fake, g) = bce_logits(&logits, 0.0);
    d.backward(cache, &g, true);
    Ok(l_real + l_fake)
}

/// Non-saturating generator loss `-mean log D(fake)`; returns the loss and
/// the gradient w.r.t. the fake images (discriminator parameters untouched).
fn generator_adversarial(d: &mut Discriminator, fake: &Tensor) -> Result<(f64, Tensor)> {
    let (logits, cache) = d.forward(fake)?;
    let (loss, g) = bce_logits(&logits, 1.0);
    Ok((loss, d.backward(cache, &g, false)))
}

/// Mean `L_GAC` over `pairs`, evaluated in chunks without updating anything.
pub fn probe_gac(model: &GardinModel, pairs: &[&RegionPair], parts: &DistanceParts, enabled: &LossTerms) -> Result<f64> {
    ensure(!pairs.is_empty(), || "empty probe batch".into())?;
    let mut total = 0.0;
    for chunk in pairs.chunks(64) {
        let a: Vec<&GrayImage> = chunk.iter().map(|p| &p.appearance).collect();
        let s: Vec<&GrayImage> = chunk.iter().map(|p| &p.past_gradient).collect();
        let fake_s = model.g_s.predict(&images_to_tensor(&a)?)?;
        let fake_a = model.g_a.predict(&images_to_tensor(&s)?)?;
        let mut batch = ReconstructionLosses::default();
        for t in enabled.iter() {
            let (v, _) = match t {
                LossTerm::As => batch_distance(&fake_s, &s, parts)?,
                LossTerm::Sa => batch_distance(&fake_a, &a, parts)?,
                LossTerm::A => batch_distance(&model.g_a.predict(&fake_s)?, &a, parts)?,
                LossTerm::S => batch_distance(&model.g_s.predict(&fake_a)?, &s, parts)?,
            };
            batch.set(t, v);
        }
        total += super::gac_loss(&batch, enabled) * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

struct StepLosses {
    rec: ReconstructionLosses,
    d_s: f64,
    d_a: f64,
    g_adv: f64,
}

struct Optimizers {
    g_s: Adam,
    g_a: Adam,
    d_s: Adam,
    d_a: Adam,
}

fn train_step(
    model: &mut GardinModel,
    opt: &mut Optimizers,
    batch: &[&RegionPair],
    cfg: &GardinTrainConfig,
    lr: f32,
) -> Result<StepLosses> {
    let a: Vec<&GrayImage> = batch.iter().map(|p| &p.appearance).collect();
    let s: Vec<&GrayImage> = batch.iter().map(|p| &p.past_gradient).collect();
    let ta = images_to_tensor(&a)?;
    let ts = images_to_tensor(&s)?;

    let (fake_s, cache_s) = model.g_s.forward(&ta)?;
    let (fake_a, cache_a) = model.g_a.forward(&ts)?;

    // Discriminators first, on the current fakes.
    model.d_s.zero_grad();
    model.d_a.zero_grad();
    let d_s = discriminator_step(&mut model.d_s, &ts, &fake_s, cfg.real_label)?;
    let d_a = discriminator_step(&mut model.d_a, &ta, &fake_a, cfg.real_label)?;
    opt.d_s.step(&mut model.d_s, lr);
    opt.d_a.step(&mut model.d_a, lr);

    model.g_s.zero_grad();
    model.g_a.zero_grad();
    let mut rec = ReconstructionLosses::default();
    let mut grad_fake_s = Tensor::zeros(fake_s.n(), fake_s.h(), fake_s.w(), 1);
    let mut grad_fake_a = Tensor::zeros(fake_a.n(), fake_a.h(), fake_a.w(), 1);
    let parts = &cfg.distance;
    if cfg.losses.contains(LossTerm::As) {
        let (v, g) = batch_distance(&fake_s, &s, parts)?;
        rec.as_ = v;
        grad_fake_s.add_assign(&g);
    }
    if cfg.losses.contains(LossTerm::Sa) {
        let (v, g) = batch_distance(&fake_a, &a, parts)?;
        rec.sa = v;
        grad_fake_a.add_assign(&g);
    }
    if cfg.losses.contains(LossTerm::A) {
        let (rec_a, cache) = model.g_a.forward(&fake_s)?;
        let (v, g) = batch_distance(&rec_a, &a, parts)?;
        rec.a = v;
        grad_fake_s.add_assign(&model.g_a.backward(cache, &g));
    }
    if cfg.losses.contains(LossTerm::S) {
        let (rec_s, cache) = model.g_s.forward(&fake_a)?;
        let (v, g) = batch_distance(&rec_s, &s, parts)?;
        rec.s = v;
        grad_fake_a.add_assign(&model.g_s.backward(cache, &g));
    }
    let (adv_s, g) = generator_adversarial(&mut model.d_s, &fake_s)?;
    grad_fake_s.add_assign(&g);
    let (adv_a, g) = generator_adversarial(&mut model.d_a, &fake_a)?;
    grad_fake_a.add_assign(&g);
    model.g_s.backward(cache_s, &grad_fake_s);
    model.g_a.backward(cache_a, &grad_fake_a);
    opt.g_s.step(&mut model.g_s, lr);
    opt.g_a.step(&mut model.g_a, lr);
    model.step += 1;

    Ok(StepLosses {
        rec,
        d_s,
        d_a,
        g_adv: adv_s + adv_a,
    })
}

fn check_finite(name: &str, v: f64, epoch: usize, batch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            term: name.to_string(),
            epoch,
            batch,
        })
    }
}

/// Trains a fresh model on `stream`. Deterministic given `seed` and the stream's own seed.
pub fn train_gardin(stream: &mut PairStream, cfg: &GardinTrainConfig, seed: u64) -> Result<(GardinModel, GardinTrainReport)> {
    cfg.validate()?;
    ensure(stream.image_size() == cfg.generator.image_size, || {
        format!(
            "region size {} does not match generator input {}",
            stream.image_size(),
            cfg.generator.image_size
        )
    })?;
    let mut model = GardinModel::new(
        cfg.generator.clone(),
        cfg.discriminator.clone(),
        substream_seed(seed, streams::WEIGHT_INIT),
    )?;
    let adam = AdamConfig {
        beta1: cfg.beta1 as f32,
        beta2: cfg.beta2 as f32,
        ..AdamConfig::default()
    };
    let mut opt = Optimizers {
        g_s: Adam::new(&model.g_s, adam),
        g_a: Adam::new(&model.g_a, adam),
        d_s: Adam::new(&model.d_s, adam),
        d_a: Adam::new(&model.d_a, adam),
    };
    let probe_pairs: Vec<RegionPair> = stream.pairs().iter().take(cfg.probe_size).cloned().collect();
    let probe: Vec<&RegionPair> = probe_pairs.iter().collect();
    let initial_probe_gac = probe_gac(&model, &probe, &cfg.distance, &cfg.losses)?;
    check_finite("probe_gac", initial_probe_gac, 0, 0)?;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.learning_rate, epoch, cfg.epochs, cfg.decay_every, cfg.decay_power);
        let order = stream.next_epoch_order();
        let mut sums = [0.0f64; 8];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&RegionPair> = idx.iter().map(|&i| &stream.pairs()[i]).collect();
            let l = train_step(&mut model, &mut opt, &batch, cfg, lr as f32)?;
            let gac = super::gac_loss(&l.rec, &cfg.losses);
            let values = [l.rec.as_, l.rec.sa, l.rec.a, l.rec.s, gac, l.d_s, l.d_a, l.g_adv];
            let names = ["L_AS", "L_SA", "L_A", "L_S", "L_GAC", "D_S", "D_A", "G_adv"];
            for ((sum, v), name) in sums.iter_mut().zip(values).zip(names) {
                check_finite(name, v, epoch + 1, b)?;
                *sum += v * batch.len() as f64;
            }
        }
        if !model.all_finite() {
            return Err(Error::NonFinite {
                term: "model parameters".into(),
                epoch: epoch + 1,
                batch: 0,
            });
        }
        let n = order.len() as f64;
        let probe_gac = probe_gac(&model, &probe, &cfg.distance, &cfg.losses)?;
        check_finite("probe_gac", probe_gac, epoch + 1, 0)?;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            l_as: sums[0] / n,
            l_sa: sums[1] / n,
            l_a: sums[2] / n,
            l_s: sums[3] / n,
            l_gac: sums[4] / n,
            d_s_loss: sums[5] / n,
            d_a_loss: sums[6] / n,
            g_adv: sums[7] / n,
            probe_gac,
        };
        log::info!(
            "gardin epoch {}/{}: lr {:.2e} L_GAC {:.5} D_S {:.4} D_A {:.4} G_adv {:.4} probe {:.5}",
            log.epoch,
            cfg.epochs,
            log.lr,
            log.l_gac,
            log.d_s_loss,
            log.d_a_loss,
            log.g_adv,
            log.probe_gac
        );
        epochs.push(log);
    }
    Ok((
        model,
        GardinTrainReport {
            initial_probe_gac,
            epochs,
        },
    ))
}

