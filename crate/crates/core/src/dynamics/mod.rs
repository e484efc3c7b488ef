//! Drifting dynamics of the single-track robot.
//!
//! The front wheel rolls without slip, the rear wheel slides under Coulomb
//! friction. Angles follow the right-hand rule in a yaw frame whose `z` axis
//! points down, so a positive yaw rate turns right and forward travel has
//! negative wheel speeds.

mod contact;
mod eom;
mod kinematics;

pub use contact::{contact_forces, ContactForces, SLIP_EPSILON};
pub use eom::{assemble_eom, EomSystem, MAX_CONDITION};
pub use kinematics::{
    project_steering, rear_contact_velocity, steering_projection_rate, unproject_steering,
};

use contact::ContactModel;
use nalgebra::{Vector2, Vector3, Vector5};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use thiserror::Error;

use crate::params::RobotParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wheel {
    Front,
    Rear,
}

impl fmt::Display for Wheel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wheel::Front => "front",
            Wheel::Rear => "rear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("steering projection undefined at roll {phi} rad (cos(phi) <= 0)")]
    SteeringDomain { phi: f64 },
    #[error("{variable} = {value} left the model validity envelope")]
    Envelope { variable: &'static str, value: f64 },
    #[error("{wheel} wheel lifted off (normal force {normal_force} N)")]
    Liftoff { wheel: Wheel, normal_force: f64 },
    #[error("mass matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("non-finite value in the dynamics")]
    NonFinite,
}

/// Dynamic state `(delta, phi, phi_dot, psi_dot, omega_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    /// Steering angle [rad].
    pub delta: f64,
    /// Roll angle [rad].
    pub phi: f64,
    /// Roll rate [rad/s].
    pub phi_dot: f64,
    /// Yaw rate [rad/s].
    pub psi_dot: f64,
    /// Front wheel angular velocity [rad/s].
    pub omega_f: f64,
}

impl State {
    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.delta, self.phi, self.phi_dot, self.psi_dot, self.omega_f)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self { delta: v[0], phi: v[1], phi_dot: v[2], psi_dot: v[3], omega_f: v[4] }
    }

    /// Left/right reflection: lateral quantities change sign, wheel speeds do not.
    pub fn mirrored(&self) -> Self {
        Self {
            delta: -self.delta,
            phi: -self.phi,
            phi_dot: -self.phi_dot,
            psi_dot: -self.psi_dot,
            omega_f: self.omega_f,
        }
    }
}

/// Control input `(delta_dot, omega_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Steering rate [rad/s].
    pub delta_dot: f64,
    /// Rear wheel angular velocity [rad/s].
    pub omega_r: f64,
}

impl ControlInput {
    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.delta_dot, self.omega_r)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { delta_dot: v[0], omega_r: v[1] }
    }

    pub fn mirrored(&self) -> Self {
        Self { delta_dot: -self.delta_dot, omega_r: self.omega_r }
    }
}

/// World-frame position of the rear contact point and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.psi)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { x: v[0], y: v[1], psi: v[2] }
    }
}

/// Derivative, accelerations and contact forces at one state/input pair.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `(delta_dot, phi_dot, phi_ddot, psi_ddot, omega_f_dot)`.
    pub derivative: Vector5<f64>,
    pub forces: ContactForces,
    pub rear_velocity: Vector2<f64>,
}

pub(crate) fn check_envelope(state: &State, input: &ControlInput) -> Result<(), DynamicsError> {
    let all = state.to_vector().iter().chain(input.to_vector().iter()).all(|v| v.is_finite());
    if !all {
        return Err(DynamicsError::NonFinite);
    }
    if state.delta.abs() >= FRAC_PI_2 {
        return Err(DynamicsError::Envelope { variable: "delta", value: state.delta });
    }
    if state.phi.abs() >= FRAC_PI_2 {
        return Err(DynamicsError::Envelope { variable: "phi", value: state.phi });
    }
    Ok(())
}

/// Full evaluation of the model: accelerations from the mass-matrix form,
/// contact forces at those accelerations, and the liftoff check.
pub fn evaluate(
    state: &State,
    input: &ControlInput,
    params: &RobotParams,
) -> Result<Evaluation, DynamicsError> {
    check_envelope(state, input)?;
    let model = ContactModel::new(state, input, params)?;
    let system = eom::assemble_from(&model)?;
    let accel = system.accelerations();
    let forces = model.forces(&accel);
    if forces.n_f < 0.0 {
        return Err(DynamicsError::Liftoff { wheel: Wheel::Front, normal_force: forces.n_f });
    }
    if forces.n_r < 0.0 {
        return Err(DynamicsError::Liftoff { wheel: Wheel::Rear, normal_force: forces.n_r });
    }
    let derivative =
        Vector5::new(input.delta_dot, state.phi_dot, accel.x, accel.y, accel.z);
    if !derivative.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    Ok(Evaluation { derivative, forces, rear_velocity: model.rear_velocity() })
}

/// `x_dot = f(x, u)`.
pub fn state_derivative(
    state: &State,
    input: &ControlInput,
    params: &RobotParams,
) -> Result<Vector5<f64>, DynamicsError> {
    Ok(evaluate(state, input, params)?.derivative)
}

/// World-frame rate of the rear contact point position and the heading.
pub fn pose_derivative(
    pose: &Pose,
    state: &State,
    params: &RobotParams,
) -> Result<Vector3<f64>, DynamicsError> {
    let delta_f = project_steering(state.delta, state.phi, params)?;
    let v = rear_contact_velocity(state.psi_dot, state.omega_f, delta_f, params);
    Ok(pose_rate_from_velocity(pose, &v, state.psi_dot))
}

pub(crate) fn pose_rate_from_velocity(pose: &Pose, v: &Vector2<f64>, psi_dot: f64) -> Vector3<f64> {
    let (s, c) = pose.psi.sin_cos();
    Vector3::new(v.x * c - v.y * s, v.x * s + v.y * c, psi_dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pose_rate_rotates_body_velocity() {
        let v = Vector2::new(1.0, 0.0);
        let r = pose_rate_from_velocity(&Pose::default(), &v, 0.7);
        assert_relative_eq!(r, Vector3::new(1.0, 0.0, 0.7), epsilon = 1e-15);
        let r = pose_rate_from_velocity(&Pose { psi: FRAC_PI_2, ..Pose::default() }, &v, 0.7);
        assert_relative_eq!(r, Vector3::new(0.0, 1.0, 0.7), epsilon = 1e-15);
    }

    #[test]
    fn pose_derivative_uses_rolling_velocity() {
        let params = RobotParams::table1();
        let state = State { omega_f: -10.0, ..State::default() };
        let r = pose_derivative(&Pose::default(), &state, &params).unwrap();
        assert_relative_eq!(r, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn envelope_is_enforced() {
        let params = RobotParams::table1();
        let s = State { phi: 1.6, ..State::default() };
        assert!(matches!(
            state_derivative(&s, &ControlInput::default(), &params),
            Err(DynamicsError::Envelope { variable: "phi", .. })
        ));
        let s = State { delta: -1.6, ..State::default() };
        assert!(matches!(
            state_derivative(&s, &ControlInput::default(), &params),
            Err(DynamicsError::Envelope { variable: "delta", .. })
        ));
        let s = State { omega_f: f64::NAN, ..State::default() };
        assert_eq!(
            state_derivative(&s, &ControlInput::default(), &params),
            Err(DynamicsError::NonFinite)
        );
    }

    #[test]
    fn upright_rest_is_balanced() {
        let params = RobotParams::table1();
        let d = state_derivative(&State::default(), &ControlInput::default(), &params).unwrap();
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn leaning_at_rest_falls_toward_the_lean() {
        let params = RobotParams::table1();
        let s = State { phi: 0.1, ..State::default() };
        let d = state_derivative(&s, &ControlInput::default(), &params).unwrap();
        assert!(d[2] > 0.0);
    }

    #[test]
    fn liftoff_is_an_error() {
        // Spinning in place fast enough throws the COM outward past the front contact.
        let params = RobotParams::table1();
        let s = State { psi_dot: 12.0, ..State::default() };
        match evaluate(&s, &ControlInput::default(), &params) {
            Err(DynamicsError::Liftoff { wheel: Wheel::Front, normal_force }) => assert!(normal_force < 0.0),
            other => panic!("expected front liftoff, got {other:?}"),
        }
        let s = State { psi_dot: 5.0, ..State::default() };
        assert!(evaluate(&s, &ControlInput::default(), &params).is_ok());
    }
}
