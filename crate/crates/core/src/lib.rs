//! Steady-state drifting toolkit for single-track two-wheeled robots.
//!
//! - [`params`]: physical parameters and their config format
//! - [`dynamics`]: drifting model `x_dot = f(x, u)` in mass-matrix form
//! - [`equilibrium`]: numeric and geometric equilibrium solvers, sweeps
//! - [`simulation`]: fixed-step closed-loop simulator with block terrain
//! - [`mpc`]: receding-horizon steady-state and transition controllers
//! - [`experiments`]: the three closed-loop scenarios and their summaries

pub mod dynamics;
pub mod equilibrium;
pub mod experiments;
pub mod mpc;
pub mod params;
pub mod simulation;

pub use params::{load_params, RobotParams};
