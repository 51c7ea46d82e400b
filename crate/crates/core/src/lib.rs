//! Approximate competitive equilibria for dividing divisible chores.
//!
//! Agents have convex, 1-homogeneous disutilities (linear or CES). The
//! solver searches for approximate KKT points of the Nash-welfare objective
//! from outside the feasible region, then turns them into allocations with
//! prices that are checked by independent verifiers.

pub mod cli;
pub mod disutility;
pub mod equilibrium;
pub mod error;
pub mod extensions;
pub mod geometry;
pub mod instance;
pub mod oracle;
pub mod pipeline;
pub mod solver;

pub use disutility::{Oracle, ProfileMap};
pub use error::{Error, Result};
pub use instance::{Allocation, DisutilitySpec, Instance, Mode};
pub use solver::{KktCertificate, SolverParams};
