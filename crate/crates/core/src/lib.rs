//! Object-centric adversarial local anomaly detection for videos.
//!
//! Regions cropped around detected objects are mapped between appearance and
//! past spatial gradient by a cross-domain GAN ([`gardin`]). Blockwise
//! reconstruction errors ([`pmsre`]) are scored by an adversarially trained
//! classifier ([`alrec`]) and aggregated to frame level ([`scoring`]).

pub mod alrec;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gardin;
pub mod imaging;
pub mod pipeline;
pub mod pmsre;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
