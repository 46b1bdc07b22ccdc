//! Mean-field limit of Hopfield-like rate networks.
//!
//! A neuron `X_i` in a fully connected network of size `N` follows
//!
//! ```text
//! dX_i = g(X_i) dt + sum_j w_ij f(X_j) dt + lambda dW_i
//! ```
//!
//! with centered random weights `w_ij = J/N + (sigma/sqrt(N)) z_ij`. As
//! `N` grows the neurons decouple: a single representative path feels the
//! empirical mean through `J m(t)` and the weight disorder through an
//! additional Gaussian drift whose covariance is the activation kernel
//! `K(t, s) = sigma^2 E[f(X_t) f(X_s)]`. The pair `(m, K)` solves a fixed
//! point equation, and this crate computes it three ways:
//!
//! - [`fixed_point`] iterates the map on a particle ensemble, driving each
//!   particle with the conditionally-Gaussian increments implied by the
//!   current kernel (see [`kernel`] and [`volterra`]),
//! - [`quenched`] simulates the finite network itself with sampled weights
//!   ([`quenched::WeightSampler`]), for convergence checks against the
//!   mean-field curves,
//! - [`f1`] specializes to the constant activation `f = 1`, where the
//!   whole system is Gaussian and every curve has a closed form.
//!
//! [`runner`] wires these into experiment runs with a stable on-disk
//! artifact layout; the `hopmf` binary is a thin argument parser over it.
//!
//! Everything is deterministic given the configuration: randomness comes
//! from a counter-based generator ([`rng`]) keyed by seed and purpose, and
//! parallel reductions ([`par`]) use a fixed chunk layout so results do not
//! depend on thread scheduling. The `parallel` feature (default) enables
//! rayon; without it the same chunked code runs sequentially.

pub mod config;
pub mod error;
pub mod f1;
pub mod fixed_point;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod model;
pub mod par;
pub mod quenched;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod volterra;

pub use error::{Error, Result};
