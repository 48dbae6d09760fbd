//! Multi-period dispatch of grids with energy storage.
//!
//! A [`grid::Network`] is turned into constraint blocks (one network block
//! and one block per storage device), assembled into a [`problem::Problem`],
//! solved with [`solver::solve`] and checked with [`audit::audit_schedule`].

// `!(a < b)` is used on purpose: it also rejects NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advise;
pub mod algebra;
pub mod audit;
pub mod block;
pub mod ess;
pub mod grid;
pub mod network;
pub mod problem;
pub mod solver;
