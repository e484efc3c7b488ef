//! COM acceleration, normal forces and Coulomb friction at the wheel contacts.
//!
//! Frames: the yaw frame `o-xyz` sits at the rear contact point with `x`
//! along the wheelbase and `z` pointing down, rotating with angular velocity
//! `(0, 0, psi_dot)`. Every force is expressed in that frame.

use super::kinematics::{project_steering, projection_rate_at, rear_contact_velocity};
use super::{ControlInput, DynamicsError, State};
use crate::params::RobotParams;
use nalgebra::{Vector2, Vector3};

/// Rear slip speed below which the friction direction is regularized [m/s].
pub const SLIP_EPSILON: f64 = 1e-4;

/// Wheel-ground forces in the yaw frame [N].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForces {
    pub n_f: f64,
    pub n_r: f64,
    pub f_fx: f64,
    pub f_fy: f64,
    pub f_rx: f64,
    pub f_ry: f64,
    /// COM acceleration `a_g` the forces were evaluated at [m/s^2].
    pub com_accel: Vector3<f64>,
    /// Rear slip velocity `(v_rx + omega_r r, v_ry)` [m/s].
    pub slip_velocity: Vector2<f64>,
    /// Set when the slip speed fell below [`SLIP_EPSILON`] and the norm was floored.
    pub slip_regularized: bool,
}

impl ContactForces {
    pub fn rear_friction(&self) -> Vector2<f64> {
        Vector2::new(self.f_rx, self.f_ry)
    }

    pub fn front_friction(&self) -> Vector2<f64> {
        Vector2::new(self.f_fx, self.f_fy)
    }
}

/// Quantities that depend on the state and input only. Every force term is
/// affine in the acceleration triple `(phi_ddot, psi_ddot, omega_f_dot)`, so
/// one instance serves any number of candidate accelerations.
#[derive(Debug, Clone)]
pub(crate) struct ContactModel {
    params: RobotParams,
    state: State,
    omega_r: f64,
    sin_phi: f64,
    cos_phi: f64,
    sin_df: f64,
    cos_df: f64,
    delta_f_dot: f64,
    v_rear: Vector2<f64>,
    r_rg: Vector3<f64>,
    r_rg_dot: Vector3<f64>,
    v_com: Vector3<f64>,
    slip: Vector2<f64>,
    slip_norm: f64,
    slip_regularized: bool,
}

impl ContactModel {
    pub(crate) fn new(
        state: &State,
        input: &ControlInput,
        params: &RobotParams,
    ) -> Result<Self, DynamicsError> {
        let delta_f = project_steering(state.delta, state.phi, params)?;
        let delta_f_dot = projection_rate_at(
            state.delta,
            input.delta_dot,
            state.phi,
            state.phi_dot,
            delta_f,
            params,
        );
        let (sin_phi, cos_phi) = state.phi.sin_cos();
        let (sin_df, cos_df) = delta_f.sin_cos();
        let h = params.com_height;
        let v_rear = rear_contact_velocity(state.psi_dot, state.omega_f, delta_f, params);

        let omega = Vector3::new(0.0, 0.0, state.psi_dot);
        let r_rg = Vector3::new(params.com_offset, h * sin_phi, -h * cos_phi);
        let r_rg_dot = Vector3::new(0.0, h * cos_phi * state.phi_dot, h * sin_phi * state.phi_dot);
        let v_com = Vector3::new(v_rear.x, v_rear.y, 0.0) + r_rg_dot + omega.cross(&r_rg);

        let slip = Vector2::new(v_rear.x + input.omega_r * params.wheel_radius, v_rear.y);
        let raw = slip.norm();
        Ok(Self {
            params: *params,
            state: *state,
            omega_r: input.omega_r,
            sin_phi,
            cos_phi,
            sin_df,
            cos_df,
            delta_f_dot,
            v_rear,
            r_rg,
            r_rg_dot,
            v_com,
            slip,
            slip_norm: raw.max(SLIP_EPSILON),
            slip_regularized: raw < SLIP_EPSILON,
        })
    }

    pub(crate) fn slip_regularized(&self) -> bool {
        self.slip_regularized
    }

    /// COM acceleration by the transport theorem: `a_g = d/dt(v_g)|_frame + omega x v_g`.
    fn com_accel(&self, accel: &Vector3<f64>) -> Vector3<f64> {
        let (phi_ddot, psi_ddot, omega_f_dot) = (accel.x, accel.y, accel.z);
        let s = &self.state;
        let h = self.params.com_height;
        let r = self.params.wheel_radius;

        // Frame-relative rate of the rear contact velocity (differentiated rolling constraints).
        let rear_rate = Vector3::new(
            -omega_f_dot * r * self.cos_df + s.omega_f * r * self.sin_df * self.delta_f_dot,
            -psi_ddot * self.params.wheelbase
                - omega_f_dot * r * self.sin_df
                - s.omega_f * r * self.cos_df * self.delta_f_dot,
            0.0,
        );
        let phi_dot_sq = s.phi_dot * s.phi_dot;
        let r_rg_ddot = Vector3::new(
            0.0,
            -h * self.sin_phi * phi_dot_sq + h * self.cos_phi * phi_ddot,
            h * self.cos_phi * phi_dot_sq + h * self.sin_phi * phi_ddot,
        );
        let omega = Vector3::new(0.0, 0.0, s.psi_dot);
        let omega_dot = Vector3::new(0.0, 0.0, psi_ddot);
        let v_com_rate =
            rear_rate + r_rg_ddot + omega_dot.cross(&self.r_rg) + omega.cross(&self.r_rg_dot);
        v_com_rate + omega.cross(&self.v_com)
    }

    pub(crate) fn forces(&self, accel: &Vector3<f64>) -> ContactForces {
        let p = &self.params;
        let a_g = self.com_accel(accel);
        let (m, a, b, h, g) = (p.mass, p.com_offset, p.wheelbase, p.com_height, p.gravity);
        let n_f = (m * a * (g - a_g.z) - m * h * a_g.x * self.cos_phi) / b;
        let n_r = (m * (b - a) * (g - a_g.z) + m * h * a_g.x * self.cos_phi) / b;
        let scale = -p.mu * n_r / self.slip_norm;
        let f_rx = scale * self.slip.x;
        let f_ry = scale * self.slip.y;
        ContactForces {
            n_f,
            n_r,
            f_fx: m * a_g.x - f_rx,
            f_fy: m * a_g.y - f_ry,
            f_rx,
            f_ry,
            com_accel: a_g,
            slip_velocity: self.slip,
            slip_regularized: self.slip_regularized,
        }
    }

    /// Right-hand side minus left-hand side of the roll, yaw and front-wheel
    /// equations at a candidate acceleration: `F - M * accel`.
    pub(crate) fn eom_residual(&self, accel: &Vector3<f64>) -> Vector3<f64> {
        let p = &self.params;
        let s = &self.state;
        let f = self.forces(accel);
        let h = p.com_height;
        let roll = (f.n_f + f.n_r) * h * self.sin_phi - (f.f_ry + f.f_fy) * h * self.cos_phi
            + p.rear_wheel_inertia * self.omega_r * s.psi_dot * self.cos_phi
            - p.roll_inertia * accel.x;
        let yaw = (f.f_fx + f.f_rx) * h * self.sin_phi + f.f_fy * (p.wheelbase - p.com_offset)
            - f.f_ry * p.com_offset
            - p.yaw_inertia * accel.y;
        let wheel = f.f_fx * p.wheel_radius * self.cos_df + f.f_fy * p.wheel_radius * self.sin_df
            - p.front_wheel_inertia * accel.z;
        Vector3::new(roll, yaw, wheel)
    }

    pub(crate) fn rear_velocity(&self) -> Vector2<f64> {
        self.v_rear
    }
}

/// Contact forces at `state`/`input` for a candidate acceleration triple
/// `(phi_ddot, psi_ddot, omega_f_dot)`. The result is affine in `accel`.
pub fn contact_forces(
    state: &State,
    input: &ControlInput,
    accel: &Vector3<f64>,
    params: &RobotParams,
) -> Result<ContactForces, DynamicsError> {
    Ok(ContactModel::new(state, input, params)?.forces(accel))
}
