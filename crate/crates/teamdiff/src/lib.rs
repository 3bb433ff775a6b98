//! Discrete-diffusion policies for ad hoc teamwork on grid worlds.
//!
//! The crate trains an ego agent to cooperate with previously unseen
//! scripted teammates. The policy is a categorical denoising diffusion
//! model over discrete actions, conditioned on a windowed state encoding
//! through FiLM feature modulation, and trained offline with two
//! auxiliary prediction heads (return-to-go and future-state goal) that
//! shape the denoiser's intermediate features.
//!
//! Everything is deterministic given a seed: environments, teammate
//! pools, dataset collection, training, and evaluation. Heavy inner
//! loops (batch gradients, evaluation rollouts) are data-parallel via
//! rayon when the default `parallel` feature is enabled, with a
//! sequential fallback that produces bit-identical results.

pub mod dataset;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod par;
pub mod policy;
pub mod rng;
pub mod teammates;
pub mod tensor;
pub(crate) mod wire;

pub use error::Error;
