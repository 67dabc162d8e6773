//! Distributed resource allocation and consensus optimization through duality.
//!
//! Resource allocation (`min Σ fᵢ(xᵢ)` s.t. `Σ xᵢ = Σ Rᵢ`) has a Lagrange dual
//! that is a consensus problem in the multiplier, and a consensus problem has a
//! Fenchel dual that is a resource allocation problem. This crate builds both
//! transforms, runs a totally asynchronous first-order consensus iteration over
//! random switching networks on the dual, and checks every result against
//! centralized oracles.
//!
//! Modules:
//! - [`convex`]: costs, conjugates, and the inner maximization.
//! - [`network`]: weighted graph realizations, connectivity checks, switching processes.
//! - [`duality`]: forward/reverse dual transforms and primal recovery.
//! - [`algorithm`]: the asynchronous dual iteration and the center-free RA iteration.
//! - [`oracle`]: centralized reference solvers.
//! - [`harness`]: JSON configs, CLI commands, traces and reports.

pub mod algorithm;
pub mod convex;
pub mod duality;
pub mod harness;
pub mod network;
pub mod oracle;
