//! Truncated-latent autoencoder ("spectrum" codes) with certified
//! quantization grids, spiking-pattern statistics, description-length
//! accounting, covering/packing essence bounds, and information diagnostics.

pub mod error;
pub mod essence;
pub mod info_metrics;
pub mod io;
pub mod mdl;
pub mod model;
pub mod net;
pub mod pattern_stats;
pub mod pipeline;
pub mod robustness;
pub mod spectrum;
pub mod support;

pub use error::{Error, Result};
pub use model::{reconstruction_error, train, Codec, Decoder, SpectrumVae, TrainConfig};
pub use spectrum::{truncate, SpectrumParams, Spectrum, SpikingPattern};
