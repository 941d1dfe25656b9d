//! Hybrid bootstrap audio representation learning at desk scale.
//!
//! Pipeline: WAV -> 16 kHz mono -> 64-band log-mel spectrogram -> paired
//! random augmentations -> online/target bootstrap training, optionally
//! regularized by regression onto deterministic DSP features -> scene or
//! timestamp embeddings -> shallow-probe evaluation and CKA layer-similarity
//! analysis.

pub mod audio;
pub mod augment;
pub mod error;
pub mod features;
pub mod frontend;

pub use error::{CoreError, Result};
