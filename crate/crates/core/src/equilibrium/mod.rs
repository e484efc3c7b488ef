//! Steady-state drifting equilibria.
//!
//! An equilibrium is the 5-vector `(delta, phi, psi_dot, omega_f, omega_r)`
//! at which the roll, yaw and front-wheel accelerations vanish with zero
//! steering rate and zero roll rate. Fixing two of the five variables leaves
//! three equations in three unknowns.
//!
//! Two solvers are provided: [`solve_numeric`] runs damped Newton on the full
//! model, [`solve_adesa`] runs the geometric fixed-point iteration on the
//! small-roll approximation.

mod adesa;
mod numeric;
mod sweep;

pub use adesa::{solve_adesa, AdesaOptions};
pub use numeric::{solve_numeric, solve_numeric_with, NewtonOptions};
pub use sweep::{
    compare, overall, sweep, sweep_with, ComparisonRow, SweepMethod, SweepOptions, SweepRow,
    SweepTable, COMPARISON_HEADER, SWEEP_HEADER,
};

use crate::dynamics::{
    evaluate, project_steering, rear_contact_velocity, ControlInput, DynamicsError, State,
    SLIP_EPSILON,
};
use crate::params::RobotParams;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("invalid equilibrium spec: {0}")]
    InvalidSpec(String),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("no drift equilibrium: {0}")]
    Infeasible(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<EquilibriumPoint>,
    },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("line search collapsed {collapses} times (residual {residual:e}); no equilibrium nearby")]
    NoEquilibrium { collapses: usize, residual: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

impl EquilibriumError {
    /// Whether the failure means that no equilibrium exists at the request,
    /// as opposed to the solver giving up.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            EquilibriumError::Infeasible(_)
                | EquilibriumError::NoEquilibrium { .. }
                | EquilibriumError::Dynamics(_)
        )
    }
}

/// One of the five equilibrium variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Delta,
    Phi,
    PsiDot,
    OmegaF,
    OmegaR,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::Delta, Var::Phi, Var::PsiDot, Var::OmegaF, Var::OmegaR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::Delta => "delta",
            Var::Phi => "phi",
            Var::PsiDot => "psi_dot",
            Var::OmegaF => "omega_f",
            Var::OmegaR => "omega_r",
        }
    }

    pub fn is_angle(self) -> bool {
        matches!(self, Var::Delta | Var::Phi)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Var {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Var::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown equilibrium variable `{s}`"))
    }
}

/// Equilibrium variables `(delta, phi, psi_dot, omega_f, omega_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Equilibrium {
    pub delta: f64,
    pub phi: f64,
    pub psi_dot: f64,
    pub omega_f: f64,
    pub omega_r: f64,
}

impl Equilibrium {
    pub fn to_array(&self) -> [f64; 5] {
        [self.delta, self.phi, self.psi_dot, self.omega_f, self.omega_r]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { delta: a[0], phi: a[1], psi_dot: a[2], omega_f: a[3], omega_r: a[4] }
    }

    pub fn get(&self, var: Var) -> f64 {
        self.to_array()[var.index()]
    }

    pub fn set(&mut self, var: Var, value: f64) {
        let mut a = self.to_array();
        a[var.index()] = value;
        *self = Self::from_array(a);
    }

    /// Steady state: zero roll rate.
    pub fn state(&self) -> State {
        State {
            delta: self.delta,
            phi: self.phi,
            phi_dot: 0.0,
            psi_dot: self.psi_dot,
            omega_f: self.omega_f,
        }
    }

    /// Steady input: zero steering rate.
    pub fn input(&self) -> ControlInput {
        ControlInput { delta_dot: 0.0, omega_r: self.omega_r }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            delta: -self.delta,
            phi: -self.phi,
            psi_dot: -self.psi_dot,
            omega_f: self.omega_f,
            omega_r: self.omega_r,
        }
    }

    /// Steering opposite to the yaw rate.
    pub fn is_counter_steering(&self) -> bool {
        is_counter_steering(self.delta, self.psi_dot)
    }
}

pub fn is_counter_steering(delta: f64, psi_dot: f64) -> bool {
    delta != 0.0 && psi_dot != 0.0 && delta.signum() != psi_dot.signum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Numeric,
    Adesa,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(Method::Numeric),
            "adesa" => Ok(Method::Adesa),
            _ => Err(format!("unknown method `{s}` (expected numeric or adesa)")),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Numeric => "numeric",
            Method::Adesa => "adesa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Circular-motion geometry of an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Projected steering angle [rad].
    pub delta_f: f64,
    /// Rear sideslip: angle from the rear wheel heading to its contact velocity [rad].
    pub sideslip: f64,
    /// Turning radius of the rear contact point [m].
    pub rear_radius: f64,
    /// Speed of the rear contact point [m/s].
    pub rear_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub xi: Equilibrium,
    /// Convergence measure of the producing method: the acceleration norm for
    /// Newton, the final steering mismatch for the geometric iteration.
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: Method,
    pub geometry: Geometry,
    /// False for degenerate points where the rear wheel does not slide.
    pub drifting: bool,
}

/// Two fixed equilibrium variables plus an optional initial guess.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSpec {
    fixed: [(Var, f64); 2],
    pub guess: Option<Equilibrium>,
}

impl EquilibriumSpec {
    pub fn new(first: (Var, f64), second: (Var, f64)) -> Result<Self, EquilibriumError> {
        if first.0 == second.0 {
            return Err(EquilibriumError::InvalidSpec(format!(
                "`{}` fixed twice; two distinct variables are required",
                first.0
            )));
        }
        if !first.1.is_finite() || !second.1.is_finite() {
            return Err(EquilibriumError::InvalidSpec("fixed values must be finite".into()));
        }
        Ok(Self { fixed: [first, second], guess: None })
    }

    /// The common case: steering angle and yaw rate.
    pub fn steering_and_yaw_rate(delta: f64, psi_dot: f64) -> Result<Self, EquilibriumError> {
        Self::new((Var::Delta, delta), (Var::PsiDot, psi_dot))
    }

    pub fn with_guess(mut self, guess: Equilibrium) -> Self {
        self.guess = Some(guess);
        self
    }

    pub fn fixed(&self) -> &[(Var, f64); 2] {
        &self.fixed
    }

    pub fn fixed_value(&self, var: Var) -> Option<f64> {
        self.fixed.iter().find(|(v, _)| *v == var).map(|(_, x)| *x)
    }

    pub fn free(&self) -> [Var; 3] {
        let mut out = [Var::Delta; 3];
        let mut k = 0;
        for v in Var::ALL {
            if self.fixed_value(v).is_none() {
                out[k] = v;
                k += 1;
            }
        }
        out
    }

    pub fn mirrored(&self) -> Self {
        let flip = |(v, x): (Var, f64)| match v {
            Var::Delta | Var::Phi | Var::PsiDot => (v, -x),
            Var::OmegaF | Var::OmegaR => (v, x),
        };
        Self {
            fixed: [flip(self.fixed[0]), flip(self.fixed[1])],
            guess: self.guess.map(|g| g.mirrored()),
        }
    }
}

/// Roll, yaw and front-wheel accelerations at the steady state/input implied by `xi`.
pub fn residual(xi: &Equilibrium, params: &RobotParams) -> Result<Vector3<f64>, EquilibriumError> {
    let eval = evaluate(&xi.state(), &xi.input(), params)?;
    Ok(eval.derivative.fixed_rows::<3>(2).into_owned())
}

/// Geometry of `xi` from the full rolling kinematics.
pub fn kinematic_geometry(xi: &Equilibrium, params: &RobotParams) -> Result<(Geometry, bool), EquilibriumError> {
    let delta_f = project_steering(xi.delta, xi.phi, params)?;
    let v = rear_contact_velocity(xi.psi_dot, xi.omega_f, delta_f, params);
    let speed = v.norm();
    let slip = nalgebra::Vector2::new(v.x + xi.omega_r * params.wheel_radius, v.y);
    let sideslip = if speed > 0.0 { v.y.atan2(v.x) } else { 0.0 };
    let rear_radius = if xi.psi_dot != 0.0 { speed / xi.psi_dot.abs() } else { f64::INFINITY };
    let drifting = xi.psi_dot != 0.0 && slip.norm() >= SLIP_EPSILON;
    Ok((Geometry { delta_f, sideslip, rear_radius, rear_speed: speed }, drifting))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_rejects_duplicate_variables() {
        assert!(EquilibriumSpec::new((Var::Phi, 0.1), (Var::Phi, 0.2)).is_err());
        assert!(EquilibriumSpec::new((Var::Phi, f64::NAN), (Var::Delta, 0.2)).is_err());
        let s = EquilibriumSpec::new((Var::OmegaR, -20.0), (Var::Delta, 0.2)).unwrap();
        assert_eq!(s.free(), [Var::Phi, Var::PsiDot, Var::OmegaF]);
    }

    #[test]
    fn var_names_round_trip() {
        for v in Var::ALL {
            assert_eq!(v.name().parse::<Var>().unwrap(), v);
        }
        assert!("theta".parse::<Var>().is_err());
    }

    #[test]
    fn counter_steering_sign_convention() {
        assert!(is_counter_steering(-0.26, 1.2));
        assert!(is_counter_steering(0.26, -1.2));
        assert!(!is_counter_steering(0.26, 1.2));
        assert!(!is_counter_steering(0.0, 1.2));
    }

    #[test]
    fn residual_at_upright_rest_is_zero() {
        let r = residual(&Equilibrium::default(), &RobotParams::table1()).unwrap();
        assert_eq!(r.norm(), 0.0);
    }
}
