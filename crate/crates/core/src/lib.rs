//! Variational time stepping for gradient flows with nonlinear mobility.
//!
//! Each step of the scheme minimizes a discrete action plus the energy of the
//! final density over space-time fluxes, subject to a discrete continuity
//! equation. The crate provides the mobility and energy building blocks, the
//! space-time grid, a Newton solver for one step, the flow driver and a
//! command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod flow;

pub mod grid;
pub mod mobility;
pub mod solver;

pub use energy::{EnergyForm, Gradient, Internal, Potential, PotentialSamples};
pub use error::{Error, Result};
pub use flow::{
    check_energy_slack, interpolate_pwc, run_flow, FlowConfig, StepDiagnostics, Trajectory,
};

pub use grid::{cell_average, GridSpec, InitialProfile};
pub use mobility::{ActionParams, GrowthClass, MobilitySpec};
pub use solver::{estimate_distance, solve_step, ObjectiveSpec, SolveOptions, SolveResult};
