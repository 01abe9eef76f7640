use std::path::Path;

use ocvad_nn::{Module, Param};
use serde::{Deserialize, Serialize};

use super::{DiscriminatorSpec, GardinModel, GeneratorSpec};
use crate::checkpoint;
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "gardin";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    step: u64,
}

impl GardinModel {
    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.g_s.params();
        out.extend(self.g_a.params());
        out.extend(self.d_s.params());
        out.extend(self.d_a.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.g_s.params_mut();
        out.extend(self.g_a.params_mut());
        out.extend(self.d_s.params_mut());
        out.extend(self.d_a.params_mut());
        out
    }
}

pub fn save_model(model: &GardinModel, path: &Path) -> Result<()> {
    let meta = Meta {
        generator: model.g_s.spec().clone(),
        discriminator: model.d_s.spec().clone(),
        step: model.step,
    };
    checkpoint::write(path, CHECKPOINT_KIND, serde_json::to_value(meta).expect("meta serializes"), &model.params())
}

fn read_meta(c: &checkpoint::Container, path: &Path) -> Result<Meta> {
    serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad model metadata: {e}", path.display())))
}

/// Loads a model using the specs stored in the checkpoint.
pub fn load_model(path: &Path) -> Result<GardinModel> {
    let c = checkpoint::read(path, CHECKPOINT_KIND)?;
    let meta = read_meta(&c, path)?;
    let mut model = GardinModel::new(meta.generator, meta.discriminator, 0)?;
    c.restore(model.params_mut())?;
    model.step = meta.step;
    Ok(model)
}

/// Loads a checkpoint into a model built from the given specs; a checkpoint
/// trained with other specs fails with an error naming the first mismatched
/// layer.
pub fn load_model_with_specs(path: &Path, gen: &GeneratorSpec, disc: &DiscriminatorSpec) -> Result<GardinModel> {
    let c = checkpoint::read(path, CHECKPOINT_KIND)?;
    let meta = read_meta(&c, path)?;
    let mut model = GardinModel::new(gen.clone(), disc.clone(), 0)?;
    c.restore(model.params_mut())?;
    model.step = meta.step;
    Ok(model)
}
