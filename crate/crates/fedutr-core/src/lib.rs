//! Desk-scale federated recommendation simulator.
//!
//! Clients hold private interaction sets and train a scoring model over a
//! shared item-embedding table initialized from universal (text-derived)
//! representations. A residual fusion layer (CIFM) overlays locally learned
//! interaction signal on those embeddings, a client-side gate (LAM) blends
//! the server's aggregate fusion parameters with the client's previous ones,
//! and an optional sparsity-aware gate (SAR) adapts the residual mix to each
//! client's interaction count. The crate also ships ranking evaluation,
//! local differential privacy on uploads, and a convergence harness on a
//! strongly convex testbed.

pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod urm;

pub use error::{Error, Result};

/// Scalar type used by the experiments; the numeric core is generic, the
/// trained models run in 64-bit.
pub type Real = f64;
pub type Vector = numeric::Vector<Real>;
pub type Matrix = numeric::Matrix<Real>;
pub use numeric::rng::RngStream;

/// Layer-norm epsilon used throughout the models.
pub const LN_EPS: Real = 1e-5;
