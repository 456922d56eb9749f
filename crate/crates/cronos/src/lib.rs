//! Convex training for two-layer ReLU networks, plus an alternating scheme
//! that extends it to deeper ones.
//!
//! The training problem is a convex program over gated linear predictors:
//! sample activation patterns from the data, then fit a group-lasso model
//! subject to cone constraints that keep each pattern consistent. An ADMM
//! loop solves it, with the linear system in the u-update handled by
//! conjugate gradients under a randomized Nystrom preconditioner.

pub mod am;
pub mod checkpoint;
pub mod dense;
pub mod linops;
pub mod nystrom;
pub mod reference;
pub mod rng;
pub mod solver;

pub use rng::Rng;
