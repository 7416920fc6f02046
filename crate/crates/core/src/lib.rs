//! Generative multisensory network.
//!
//! A small, self-contained stack for learning modality-invariant scene
//! representations from partial multisensory observations:
//!
//! * [`tensor`]: reverse-mode tape over dense tensors, Adam, seeded randomness.
//! * [`poe`]: diagonal-Gaussian expert algebra (products, KL, sampling, densities).
//! * [`scene`]: procedural polycube scenes, camera and feeler-ray sensors,
//!   modality splitting and the binary dataset format.
//! * [`model`]: modality encoders, the multi-step latent chain with sum,
//!   product-of-experts and amortized product-of-experts fusion, renderers,
//!   the ELBO and the trainer.
//! * [`eval`]: importance-weighted likelihoods, classification, cross-modal
//!   curves, missing-modality runs, scaling reports and sample dumps.

pub mod error;
pub mod eval;
pub mod model;
pub mod poe;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
