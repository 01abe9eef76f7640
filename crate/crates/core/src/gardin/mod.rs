//! Cross-domain GAN relating object appearance (domain A) and past spatial
//! gradient (domain S): generators `G_S: A → S`, `G_A: S → A` and patch
//! discriminators `D_S`, `D_A`.

mod arch;
mod checkpoint;
mod losses;
mod train;

pub use arch::{
    Discriminator, DiscriminatorCache, DiscriminatorSpec, Generator, GeneratorCache, GeneratorSpec, INIT_STD, KERNEL,
    LEAKY_SLOPE,
};
pub use checkpoint::{load_model, load_model_with_specs, save_model, CHECKPOINT_KIND};
pub use losses::{
    adversarial_losses, adversarial_term, gac_loss, reconstruction_losses, AdversarialLosses, LossTerm, LossTerms,
    ReconstructionLosses, Translate, PROB_CLAMP,
};
pub use train::{lr_at_epoch, train_gardin, EpochLog, GardinTrainConfig, GardinTrainReport};

use ocvad_nn::{Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::imaging::GrayImage;

/// Parameters of both generators and both discriminators.
#[derive(Debug, Clone)]
pub struct GardinModel {
    pub g_s: Generator,
    pub g_a: Generator,
    pub d_s: Discriminator,
    pub d_a: Discriminator,
    /// Number of completed optimizer steps.
    pub step: u64,
}

impl GardinModel {
    /// Fresh model with N(0, 0.02) weights drawn from `seed`.
    pub fn new(gen: GeneratorSpec, disc: DiscriminatorSpec, seed: u64) -> Result<Self> {
        ensure(gen.image_size == disc.image_size, || "generator and discriminator image sizes differ".into())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            g_s: Generator::new("g_s", gen.clone(), &mut rng)?,
            g_a: Generator::new("g_a", gen, &mut rng)?,
            d_s: Discriminator::new("d_s", disc.clone(), &mut rng)?,
            d_a: Discriminator::new("d_a", disc, &mut rng)?,
            step: 0,
        })
    }

    pub fn image_size(&self) -> usize {
        self.g_s.spec().image_size
    }

    /// `G_S(a)`: predicted past gradient for an appearance image.
    pub fn generate_gradient(&self, a: &GrayImage) -> Result<GrayImage> {
        self.g_s.translate(a)
    }

    /// `G_A(s)`: predicted appearance for a past-gradient image.
    pub fn generate_appearance(&self, s: &GrayImage) -> Result<GrayImage> {
        self.g_a.translate(s)
    }

    pub fn all_finite(&self) -> bool {
        [
            self.g_s.params(),
            self.g_a.params(),
            self.d_s.params(),
            self.d_a.params(),
        ]
        .iter()
        .flatten()
        .all(|p| p.all_finite())
    }
}

/// Stacks equally sized images into an `[n, S, S, 1]` tensor.
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    ensure(!images.is_empty(), || "empty image batch".into())?;
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        ensure(img.height() == h && img.width() == w, || "images in a batch must share one size".into())?;
        data.extend(img.data().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(images.len(), h, w, 1, data)?)
}

/// Splits an `[n, S, S, 1]` tensor back into images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<GrayImage>> {
    ensure(t.c() == 1, || format!("expected single-channel tensor, got {} channels", t.c()))?;
    (0..t.n()).map(|i| GrayImage::from_f32(t.h(), t.w(), t.item(i))).collect()
}
