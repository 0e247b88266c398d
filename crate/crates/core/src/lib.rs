//! Token-based Markov-chain coordinate descent for vertical federated learning.
//!
//! Clients hold disjoint feature blocks of a shared dataset and jointly fit a
//! generalized linear model by passing a token (the aggregate `z = X * theta`)
//! along a lazy random walk over the communication graph. A server can
//! periodically synchronize several tokens, trading client-to-client hops
//! against client-to-server messages.
//!
//! The crate provides:
//!
//! - [`graph`]: topology construction and the Markov-chain analytics
//!   (stationary distribution, spectral gap, mixing-time bounds) that govern
//!   the walk,
//! - [`data`]: dataset synthesis, SVMLight ingestion, and feature
//!   partitioning,
//! - [`objective`]: ridge and sparse-logistic objectives, token-based partial
//!   gradients, and high-precision reference solvers,
//! - [`token`]: the token state machine,
//! - [`engine`]: the STCD / MTCD / S-VFL protocol drivers with deterministic
//!   per-token RNG streams,
//! - [`metrics`]: suboptimality gaps, communication-cost accounting,
//!   step-size-bound constants, and CSV export.

pub mod data;
pub mod engine;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod rngstream;
pub mod token;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
