//! Composition-augmented contrastive sentence embeddings at desk scale.

pub mod augment;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result};
