//! Minibatch Point-SAGA: a randomized proximal method for minimizing
//! `sum_i f_i(x)` over `R^d` when every `f_i` is `mu`-strongly convex and
//! `L`-smooth. Each iteration calls the prox of `s` uniformly sampled
//! components and maintains a table of gradient estimates.
//!
//! The crate is split along the lines of the method:
//!
//! * [`problem`] holds the finite-sum model and the oracle contract,
//! * [`prox`] and [`components`] provide the proximity operators,
//! * [`sampler`] draws the uniform `s`-subsets from a reproducible stream,
//! * [`solver`] runs the iteration,
//! * [`analysis`] computes contraction rates and the Lyapunov function and
//!   checks the one-step contraction exactly by enumerating subsets,
//! * [`problems`] generates test instances and reads sparse data files,
//! * [`verify`] bundles the property suites behind `point-saga verify`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod components;
mod error;
pub mod problem;
pub mod problems;
pub mod prox;
pub mod sampler;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{assemble_problem, Component, FiniteSumProblem, Point, SmoothFunction};
pub use prox::ProxResult;
pub use solver::{SolverConfig, SolverState};

/// Default accuracy of iterative proxes, measured on the resolvent identity
/// `x + gamma * grad f(x) = z`.
pub const DEFAULT_PROX_TOL: f64 = 1e-10;

/// Per-component slack used when checking `|sum_i grad f_i(x_star)|`.
pub const TOL_STAR: f64 = 1e-8;
