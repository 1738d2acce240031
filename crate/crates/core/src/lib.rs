//! Traffic equilibria on directed networks through smoothed characteristic
//! functions.
//!
//! The crate computes stochastic (logit) Nash–Wardrop equilibria under the
//! Beckmann and stable-dynamics cost models, and their deterministic limits
//! through entropy regularization. Two families of solvers are provided:
//!
//! * dual methods ([`dual`]) work with per-edge travel times `t` and never
//!   enumerate paths. The smooth part of the dual objective is the
//!   log-sum-exp aggregate of path costs, evaluated by a smoothed
//!   Bellman–Ford recursion in [`smoothing`]; its negative gradient is the
//!   vector of expected edge loads under the Gibbs route distribution.
//! * primal path methods ([`paths`]) work with explicit path flows on small
//!   instances, either directly or through a quadratic-penalty splitting.
//!
//! Every solver returns a duality-gap certificate that can be re-checked
//! independently. The [`oracles`] module holds brute-force references used
//! by tests and by the `verify` command of the companion CLI crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dual;
mod error;
pub mod instances;
pub mod network;
pub mod oracles;
pub mod paths;
mod scalar;
pub mod smoothing;

pub use error::{Error, Result};
pub use network::{CostModel, CostParams, Edge, Network, NetworkBuilder, OdPair, Vertex};
pub use smoothing::{DualPoint, EdgeFlow};
