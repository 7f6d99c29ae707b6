//! Empirical processes of dependent Gaussian sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`hermite`] evaluates the normalized Hermite basis of `L²(γ)` and checks
//!   its generating-function, orthonormality and cross-moment identities
//!   numerically, using the Gauss–Hermite rules in [`quadrature`].
//! * [`gaussmodel`] builds covariance models for a centered stationary-marginal
//!   Gaussian sequence, computes the correlation mass `Δ_n = Σ d_ij` and samples
//!   paths through a cached lower-triangular factor.
//! * [`empirical`] evaluates `P̂_n(f)` for the centered indicator class, the
//!   exact supremum over that class, and the discretized process `Q̂_n`.
//! * [`chaining`] builds dyadic quantile nets, turns them into chaining
//!   constants `C1`, `C2`, and evaluates the tail, size, refined and rate bounds.
//! * [`montecarlo`] runs replicated experiments on reproducible substreams
//!   ([`rng`]) and fits log-log convergence rates.
//! * [`cli`] is the command-line front end (`hermchain` binary).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaining;
pub mod cli;
pub mod empirical;
pub mod error;
pub mod gaussmodel;
pub mod hermite;
pub mod montecarlo;
pub mod normal;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
