//! # lipflow
//!
//! Particle transport along gradient flows of Lipschitz-regularized
//! f-divergences.
//!
//! Given samples from a source distribution P and a target distribution Q,
//! the engine repeatedly
//!
//! 1. trains an L-Lipschitz neural discriminator φ to estimate the
//!    regularized divergence
//!    `D(P‖Q) = sup_φ { E_P[φ] − inf_ν (ν + E_Q[f*(φ − ν)]) }`,
//! 2. moves every particle along `−∇φ` with an explicit ODE step.
//!
//! The Lipschitz bound is enforced by per-layer spectral normalization and
//! acts as a hard speed limit `|∇φ| ≤ L` on the particles, which is what
//! keeps the flow numerically stable even between mutually singular
//! empirical measures.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`net`] | spectrally normalized feed-forward discriminator, exact backprop, Adam |
//! | [`fdiv`] | f-generators, Legendre conjugates, variational objective |
//! | [`transport`] | the outer particle loop, Euler/Heun steps, trajectory logs, replay |
//! | [`latent`] | PCA encoder/decoder and latent-space transport |
//! | [`datasets`] | deterministic synthetic samplers and CSV I/O |
//! | [`metrics`] | Sinkhorn divergence, exact small-instance Wasserstein, coverage scores |
//!
//! ## Determinism and parallelism
//!
//! All batch loops are chunked with a fixed chunk size and reduced in chunk
//! order, so results are bit-identical whether chunks run sequentially or on
//! a rayon pool (see [`exec::Exec`]). The `parallel` cargo feature (default
//! on) enables the rayon path; without it everything degrades to the
//! sequential driver.

pub mod datasets;
pub mod error;
pub mod exec;
pub mod fdiv;
pub mod latent;
pub mod metrics;
pub mod net;
pub mod particle;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Exec;
pub use particle::{ParticleSet, Role};
