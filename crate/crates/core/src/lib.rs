//! Attention-guided training for convolutional classifiers.
//!
//! The crate builds class-specific gradient attention maps (Grad-CAM and a
//! positive-gradient channel-weighted variant), penalises overlap between the
//! ground-truth and most-confusing class attention, and ties inner-layer
//! attention to the last-layer target region. Because those losses are built
//! from gradients, training them requires differentiating through a backward
//! pass; [`autodiff`] provides that.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod icasc;
pub mod metrics;
pub mod nn;
pub mod train;

pub use autodiff::{Tape, Tensor};
pub use error::{Error, Result};
