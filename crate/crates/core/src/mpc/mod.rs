//! Receding-horizon drifting control.
//!
//! The optimal control problem over `N` steps of an RK4-discretized model is
//! solved by iterative LQR: linearize along the current trajectory, run a
//! Riccati backward pass on the quadratic cost, then roll out the new policy
//! with a backtracking line search. Box bounds enter as quadratic penalties;
//! the returned input is clamped.

mod ilqr;
mod reference;

pub use ilqr::{InitMode, MpcController, MpcSolution, MpcSolver, PhaseRecord};
pub use reference::{plan_transition, Ramp, REFERENCE_HEADER, ReferenceSample, ReferenceTrajectory, TransitionSchedule};

use crate::dynamics::{state_derivative, ControlInput, DynamicsError, State};
use crate::equilibrium::EquilibriumError;
use crate::params::RobotParams;
use nalgebra::{SMatrix, Vector2, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type Matrix5x2 = SMatrix<f64, 5, 2>;
pub type Matrix2x5 = SMatrix<f64, 2, 5>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("current state outside the model envelope: {0}")]
    Envelope(DynamicsError),
    #[error("no dynamically valid rollout from the current state")]
    Rollout,
    #[error("reference planning failed: {0}")]
    Reference(#[from] EquilibriumError),
}

/// Horizon, weights, bounds and solver limits. Weights are diagonal. Angles
/// in radians; state order `(delta, phi, phi_dot, psi_dot, omega_f)`, input
/// order `(delta_dot, omega_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub q: [f64; 5],
    pub r: [f64; 2],
    pub q_terminal: [f64; 5],
    pub x_min: [f64; 5],
    pub x_max: [f64; 5],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub max_sqp_iters: usize,
    pub penalty_weight: f64,
    pub max_penalty_doublings: usize,
    /// Relative objective decrease below which an iterate counts as converged.
    pub tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let q = [10.0, 50.0, 1.0, 10.0, 0.1];
        let inf = f64::INFINITY;
        let delta_max = 35f64.to_radians();
        let phi_max = 40f64.to_radians();
        Self {
            horizon: 50,
            dt: 0.02,
            q,
            r: [1.0, 0.5],
            q_terminal: q.map(|v| 10.0 * v),
            x_min: [-delta_max, -phi_max, -inf, -inf, -inf],
            x_max: [delta_max, phi_max, inf, inf, inf],
            u_min: [-6.0, -80.0],
            u_max: [6.0, 80.0],
            max_sqp_iters: 10,
            penalty_weight: 1e3,
            max_penalty_doublings: 4,
            tol: 1e-6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: String| Err(MpcError::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !self.q.iter().chain(&self.q_terminal).all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("q and q_terminal must be finite and non-negative".into());
        }
        if !self.r.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("r must be finite and positive".into());
        }
        let ordered = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(a, b)| a <= b && !a.is_nan() && !b.is_nan());
        if !ordered(&self.x_min, &self.x_max) || !ordered(&self.u_min, &self.u_max) {
            return bad("bounds must satisfy min <= max elementwise".into());
        }
        if !self.u_min.iter().chain(&self.u_max).all(|v| v.is_finite()) {
            return bad("input bounds must be finite".into());
        }
        if self.max_sqp_iters == 0 {
            return bad("max_sqp_iters must be at least one".into());
        }
        if !(self.penalty_weight > 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        Ok(())
    }

    pub fn clamp_input(&self, u: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(u[0].clamp(self.u_min[0], self.u_max[0]), u[1].clamp(self.u_min[1], self.u_max[1]))
    }

    /// TOML rendering of every field, for provenance headers.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("MpcConfig serializes")
    }
}

pub(crate) fn rk4_map(
    x: &Vector5<f64>,
    u: &Vector2<f64>,
    dt: f64,
    params: &RobotParams,
) -> Result<Vector5<f64>, DynamicsError> {
    let input = ControlInput::from_vector(u);
    let f = |v: &Vector5<f64>| state_derivative(&State::from_vector(v), &input, params);
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (0.5 * dt)))?;
    let k3 = f(&(x + k2 * (0.5 * dt)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Central-difference step used for `A` and `B`.
pub const JACOBIAN_STEP: f64 = 1e-6;

pub(crate) fn jacobians(
    x: &Vector5<f64>,
    u: &Vector2<f64>,
    dt: f64,
    params: &RobotParams,
    h: f64,
) -> Result<(Matrix5, Matrix5x2), DynamicsError> {
    let mut a = Matrix5::zeros();
    let mut b = Matrix5x2::zeros();
    for j in 0..5 {
        let mut e = Vector5::zeros();
        e[j] = h;
        let col = (rk4_map(&(x + e), u, dt, params)? - rk4_map(&(x - e), u, dt, params)?) / (2.0 * h);
        a.set_column(j, &col);
    }
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = h;
        let col = (rk4_map(x, &(u + e), dt, params)? - rk4_map(x, &(u - e), dt, params)?) / (2.0 * h);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// One RK4 step of length `dt` and its Jacobians with respect to state and input.
pub fn discretize(
    state: &State,
    input: &ControlInput,
    dt: f64,
    params: &RobotParams,
) -> Result<(State, Matrix5, Matrix5x2), DynamicsError> {
    let (x, u) = (state.to_vector(), input.to_vector());
    let next = rk4_map(&x, &u, dt, params)?;
    let (a, b) = jacobians(&x, &u, dt, params, JACOBIAN_STEP)?;
    Ok((State::from_vector(&next), a, b))
}
