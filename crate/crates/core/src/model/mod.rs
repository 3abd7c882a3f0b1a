//! The LEAST masked autoencoder and its building blocks.

pub mod attribution;
pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod layers;
pub mod least;
pub mod params;
pub mod tff;

pub use config::{default_pairing, ModelConfig, PrototypeMode};
pub use least::{compute_prototypes, loss_multi, loss_ssl, loss_total, patchify, random_mask, LeastModel, Mask};
pub use params::{Bound, Param, ParamId, ParamStore};
