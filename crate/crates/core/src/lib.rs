//! Multimodal fake-news classifier over pre-extracted image-region and
//! text-token features, built on a small reverse-mode autodiff tape.
//!
//! A forward pass projects both modalities to a shared width, summarizes
//! the image regions into `N` views ([`mvr`]), fuses each view with the
//! text through stacked co-attention ([`mvff`]), pools the fused views and
//! the text ([`mva`]) and turns per-view class probabilities into one fake
//! probability. [`train`] fits the model with AdaBelief on summed binary
//! cross-entropy.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod mva;
pub mod mvff;
pub mod mvr;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
