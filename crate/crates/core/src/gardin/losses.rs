use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ocvad_nn::sigmoid;
use serde::{Deserialize, Serialize};

use super::{images_to_tensor, tensor_to_images, GardinModel, Generator};
use crate::error::{ensure, Error, Result};
use crate::imaging::{distance, DistanceParts, GrayImage};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Anything that maps one image domain onto the other.
pub trait Translate {
    fn translate(&self, img: &GrayImage) -> Result<GrayImage>;
}

impl Translate for Generator {
    fn translate(&self, img: &GrayImage) -> Result<GrayImage> {
        let s = self.spec().image_size;
        ensure(img.height() == s && img.width() == s, || {
            format!("generator expects {s}x{s} input, got {}x{}", img.height(), img.width())
        })?;
        let out = self.predict(&images_to_tensor(&[img])?)?;
        Ok(tensor_to_images(&out)?.remove(0))
    }
}

impl<F: Fn(&GrayImage) -> Result<GrayImage>> Translate for F {
    fn translate(&self, img: &GrayImage) -> Result<GrayImage> {
        self(img)
    }
}

/// One of the four reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LossTerm {
    /// `d(G_S(a), s)`
    As,
    /// `d(G_A(s), a)`
    Sa,
    /// `d(G_A(G_S(a)), a)`
    A,
    /// `d(G_S(G_A(s)), s)`
    S,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::As, LossTerm::Sa, LossTerm::A, LossTerm::S];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::As => "as",
            LossTerm::Sa => "sa",
            LossTerm::A => "a",
            LossTerm::S => "s",
        }
    }
}

impl FromStr for LossTerm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "as" => Ok(LossTerm::As),
            "sa" => Ok(LossTerm::Sa),
            "a" => Ok(LossTerm::A),
            "s" => Ok(LossTerm::S),
            other => Err(Error::Config(format!("unknown loss term `{other}`"))),
        }
    }
}

/// Non-empty set of enabled reconstruction losses, written `as+sa+a+s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LossTerms(BTreeSet<LossTerm>);

impl LossTerms {
    pub fn new(terms: impl IntoIterator<Item = LossTerm>) -> Result<Self> {
        let set: BTreeSet<_> = terms.into_iter().collect();
        ensure(!set.is_empty(), || "at least one reconstruction loss must be enabled".into())?;
        Ok(Self(set))
    }

    pub fn contains(&self, t: LossTerm) -> bool {
        self.0.contains(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = LossTerm> + '_ {
        self.0.iter().copied()
    }

    /// The nested ablation subsets `{AS}`, `{AS,SA}`, `{AS,SA,A}`, `{AS,SA,A,S}`.
    pub fn ablation_ladder() -> Vec<LossTerms> {
        (1..=4).map(|k| LossTerms(LossTerm::ALL[..k].iter().copied().collect())).collect()
    }
}

impl Default for LossTerms {
    fn default() -> Self {
        Self(LossTerm::ALL.into_iter().collect())
    }
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|t| t.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for LossTerms {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let terms = s
            .split(['+', ','])
            .filter(|t| !t.trim().is_empty())
            .map(LossTerm::from_str)
            .collect::<Result<Vec<_>>>()?;
        LossTerms::new(terms).map_err(|e| Error::Config(e.to_string()))
    }
}

impl TryFrom<String> for LossTerms {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossTerms> for String {
    fn from(t: LossTerms) -> String {
        t.to_string()
    }
}

/// The four reconstruction losses; disabled terms hold 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionLosses {
    pub as_: f64,
    pub sa: f64,
    pub a: f64,
    pub s: f64,
}

impl ReconstructionLosses {
    pub fn get(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::As => self.as_,
            LossTerm::Sa => self.sa,
            LossTerm::A => self.a,
            LossTerm::S => self.s,
        }
    }

    pub fn set(&mut self, t: LossTerm, v: f64) {
        match t {
            LossTerm::As => self.as_ = v,
            LossTerm::Sa => self.sa = v,
            LossTerm::A => self.a = v,
            LossTerm::S => self.s = v,
        }
    }
}

/// Evaluates the enabled reconstruction losses for one matched pair.
pub fn reconstruction_losses<GS: Translate + ?Sized, GA: Translate + ?Sized>(
    g_s: &GS,
    g_a: &GA,
    a: &GrayImage,
    s: &GrayImage,
    parts: &DistanceParts,
    enabled: &LossTerms,
) -> Result<ReconstructionLosses> {
    let mut out = ReconstructionLosses::default();
    let need_fake_s = enabled.contains(LossTerm::As) || enabled.contains(LossTerm::A);
    let need_fake_a = enabled.contains(LossTerm::Sa) || enabled.contains(LossTerm::S);
    let fake_s = need_fake_s.then(|| g_s.translate(a)).transpose()?;
    let fake_a = need_fake_a.then(|| g_a.translate(s)).transpose()?;
    if let Some(fs) = &fake_s {
        if enabled.contains(LossTerm::As) {
            out.as_ = distance(fs, s, parts)?;
        }
        if enabled.contains(LossTerm::A) {
            out.a = distance(&g_a.translate(fs)?, a, parts)?;
        }
    }
    if let Some(fa) = &fake_a {
        if enabled.contains(LossTerm::Sa) {
            out.sa = distance(fa, a, parts)?;
        }
        if enabled.contains(LossTerm::S) {
            out.s = distance(&g_s.translate(fa)?, s, parts)?;
        }
    }
    Ok(out)
}

/// Gradient-appearance consistency loss: the sum of the enabled terms.
pub fn gac_loss(losses: &ReconstructionLosses, enabled: &LossTerms) -> f64 {
    enabled.iter().map(|t| losses.get(t)).sum()
}

impl GardinModel {
    pub fn reconstruction_losses(
        &self,
        a: &GrayImage,
        s: &GrayImage,
        parts: &DistanceParts,
        enabled: &LossTerms,
    ) -> Result<ReconstructionLosses> {
        reconstruction_losses(&self.g_s, &self.g_a, a, s, parts, enabled)
    }
}

/// `mean log D(real) + mean log(1 - D(fake))` over every patch of every
/// sample, with probabilities clamped before the logarithm.
pub fn adversarial_term(real_probs: &[f64], fake_probs: &[f64]) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(clamp(p))).sum::<f64>() / v.len() as f64;
    mean(real_probs, &|p| p.ln()) + mean(fake_probs, &|p| (1.0 - p).ln())
}

/// Batch estimates of the two discriminator objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLosses {
    /// `E[log D_S(s)] + E[log(1 - D_S(G_S(a)))]`
    pub d_s: f64,
    /// `E[log D_A(a)] + E[log(1 - D_A(G_A(s)))]`
    pub d_a: f64,
}

pub fn adversarial_losses(model: &GardinModel, a: &[&GrayImage], s: &[&GrayImage]) -> Result<AdversarialLosses> {
    ensure(!a.is_empty() && a.len() == s.len(), || "adversarial_losses needs matched, non-empty batches".into())?;
    let ta = images_to_tensor(a)?;
    let ts = images_to_tensor(s)?;
    let fake_s = model.g_s.predict(&ta)?;
    let fake_a = model.g_a.predict(&ts)?;
    let probs = |logits: ocvad_nn::Tensor| logits.data().iter().map(|&z| sigmoid(z) as f64).collect::<Vec<_>>();
    let d_s = adversarial_term(&probs(model.d_s.forward(&ts)?.0), &probs(model.d_s.forward(&fake_s)?.0));
    let d_a = adversarial_term(&probs(model.d_a.forward(&ta)?.0), &probs(model.d_a.forward(&fake_a)?.0));
    Ok(AdversarialLosses { d_s, d_a })
}
