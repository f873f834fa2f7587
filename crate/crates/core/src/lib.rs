//! Training laboratory for adversarially trained encoder-decoder generators.
//!
//! The crate carries its own numerical substrate ([`tensor`], [`autodiff`]),
//! the generator/critic models, the reconstruction and adversarial
//! objectives, a two-domain synthetic image generator with ground-truth
//! oracles, and the training harness that ties them together.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod harness;
pub mod models;
pub mod objectives;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
