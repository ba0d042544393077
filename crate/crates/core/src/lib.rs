//! Hybrid time-dependent Lagrangian systems: event-driven simulation of
//! flows with impacts, the Lagrangian/Hamiltonian correspondence, and Routh
//! reduction by a cyclic coordinate. Ships a rough billiard with a moving
//! circular wall as the worked model.

pub mod billiard;
pub mod error;
pub mod hybrid;
pub mod io;
pub mod lagrangian;
pub mod models;
pub mod ode;
pub mod registry;
pub mod roots;
pub mod routh;

pub use error::{Error, Result};
pub use hybrid::{simulate, HybridFlow, HybridSystem, SimOptions, Termination};
pub use lagrangian::{CoState, Lagrangian, LagrangianSystem, State};
pub use routh::{CyclicStructure, ReconstructedFlow, ReducedHybridSystem};
