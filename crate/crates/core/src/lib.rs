//! Desk-scale adversarially trained multi-singer singing-synthesis acoustic
//! model: score encoder, length regulator, feed-forward decoder, trainable
//! singer embeddings, gradient-reversal singer classifier and an ensemble of
//! random-window GAN discriminators, with a built-in reverse-mode autodiff
//! substrate, a synthetic multi-singer corpus and verification tooling.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod length_regulator;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod mrwds;
pub mod param;
pub mod real;
pub mod score;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Mode, Tensor};
pub use param::{adam_step, AdamConfig, Parameter, SpectralNormState};
pub use real::Real;
