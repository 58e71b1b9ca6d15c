//! Small two-tower recommenders on implicit feedback, sparse autoencoders
//! fitted over their frozen embeddings with a prediction-aware objective,
//! and tooling to measure and steer what individual bottleneck neurons do.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`) via
//! [`Scalar`]; the pipeline and all shipped artifacts use the [`Real`]
//! alias (`f64`).

pub mod analysis;
pub mod artifact;
pub mod data;
pub mod error;
pub mod fidelity;
pub mod intervene;
pub mod math;
pub mod rec;
pub mod rng;
pub mod sae;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline and artifacts.
pub type Real = f64;
/// Dense matrix over [`Real`].
pub type Matrix = math::DenseMatrix<Real>;
/// Two-tower recommender over [`Real`].
pub type Recommender = rec::RecommenderModel<Real>;
/// Sparse autoencoder over [`Real`].
pub type Sae = sae::SaeModel<Real>;
