//! Core of a graph-based traffic microsimulator.
//!
//! A road network and the vehicles on it are encoded as a sequence of sealed,
//! typed (heterogeneous) graph snapshots. Rollouts advance the world either
//! with a classical car-following rule (IDM, Krauss) or with a learned
//! heterogeneous graph transformer trained on oracle trajectories.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, timing and
//! the command line live in the `tgsim` crate.

#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod graph;
pub mod hgt;
pub mod oracles;
pub mod scenario;
pub mod sim;

mod math;
#[cfg(test)]
mod testkit;

pub use graph::{EdgeKind, EdgeRef, GraphError, GraphSnapshot, NodeKind, NodeRef, Schema};
pub use hgt::{Batch, HgtError, ModelConfig, ModelParams};
pub use oracles::{IdmParams, KraussParams, PhaseState};
pub use scenario::{NetworkGraph, ScenarioDef, ScenarioError, ScenarioSpec};
pub use sim::{Backend, RolloutConfig, SimError, TrajectoryDataset, TrajectoryLog, WorldState};
