//! Adversarial supervised contrastive learning at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), MLP
//! classifiers with an exposed penultimate latent ([`model`]), L∞ attacks
//! ([`adversary`]), the combined adversarial-training / contrastive / KL
//! objective with its sample-selection strategies ([`loss`]), latent-space
//! divergence diagnostics ([`divergence`]) and synthetic datasets ([`data`]).

pub mod adversary;
pub mod data;
pub mod divergence;
pub mod error;
pub mod loss;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
