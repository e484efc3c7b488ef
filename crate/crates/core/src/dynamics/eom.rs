//! Mass-matrix form of the roll, yaw and front-wheel equations.

use super::contact::ContactModel;
use super::{check_envelope, ControlInput, DynamicsError, State};
use crate::params::RobotParams;
use nalgebra::{Matrix3, Vector3};

/// Condition number (1-norm) above which the mass matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `mass * (phi_ddot, psi_ddot, omega_f_dot) = forcing`.
#[derive(Debug, Clone, PartialEq)]
pub struct EomSystem {
    pub mass: Matrix3<f64>,
    pub forcing: Vector3<f64>,
    /// Set when the rear slip direction was regularized at this state.
    pub slip_regularized: bool,
    /// 1-norm condition number of `mass`.
    pub condition: f64,
    inverse: Matrix3<f64>,
}

impl EomSystem {
    /// Solves for `(phi_ddot, psi_ddot, omega_f_dot)`.
    pub fn accelerations(&self) -> Vector3<f64> {
        self.inverse * self.forcing
    }
}

fn norm1(m: &Matrix3<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn assemble_from(model: &ContactModel) -> Result<EomSystem, DynamicsError> {
    let forcing = model.eom_residual(&Vector3::zeros());
    let mut mass = Matrix3::zeros();
    for j in 0..3 {
        let mut unit = Vector3::zeros();
        unit[j] = 1.0;
        mass.set_column(j, &(forcing - model.eom_residual(&unit)));
    }
    if !mass.iter().chain(forcing.iter()).all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    let inverse = mass
        .try_inverse()
        .ok_or(DynamicsError::IllConditioned { condition: f64::INFINITY })?;
    let condition = norm1(&mass) * norm1(&inverse);
    if !(condition <= MAX_CONDITION) {
        return Err(DynamicsError::IllConditioned { condition });
    }
    Ok(EomSystem {
        mass,
        forcing,
        slip_regularized: model.slip_regularized(),
        condition,
        inverse,
    })
}

/// Builds `M` and `F` by evaluating the equation residual at the zero
/// acceleration and at the three unit accelerations.
pub fn assemble_eom(
    state: &State,
    input: &ControlInput,
    params: &RobotParams,
) -> Result<EomSystem, DynamicsError> {
    check_envelope(state, input)?;
    assemble_from(&ContactModel::new(state, input, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drifting() -> (State, ControlInput) {
        (
            State { delta: -0.26, phi: 0.32, phi_dot: -0.2, psi_dot: 1.2, omega_f: -23.0 },
            ControlInput { delta_dot: 0.3, omega_r: -27.5 },
        )
    }

    #[test]
    fn residual_vanishes_at_solved_acceleration() {
        let params = RobotParams::table1();
        let (s, u) = drifting();
        let sys = assemble_eom(&s, &u, &params).unwrap();
        let acc = sys.accelerations();
        let model = ContactModel::new(&s, &u, &params).unwrap();
        let res = model.eom_residual(&acc);
        assert!(res.norm() < 1e-10 * (1.0 + sys.forcing.norm()), "{res}");
    }

    #[test]
    fn mass_matrix_depends_on_rear_wheel_speed() {
        let params = RobotParams::table1();
        let (s, u) = drifting();
        let a = assemble_eom(&s, &u, &params).unwrap();
        let b = assemble_eom(&s, &ControlInput { omega_r: u.omega_r - 5.0, ..u }, &params).unwrap();
        assert!((a.mass - b.mass).norm() > 1e-6);
    }

    #[test]
    fn gyroscopic_roll_term_is_linear_in_rear_wheel_speed() {
        // At phi = 0 the roll forcing differs from its omega_r = 0 value by I_r * omega_r * psi_dot.
        let params = RobotParams::table1();
        let s = State { delta: 0.1, phi: 0.0, phi_dot: 0.0, psi_dot: 1.3, omega_f: -15.0 };
        let roll = |omega_r: f64| {
            assemble_eom(&s, &ControlInput { delta_dot: 0.0, omega_r }, &params).unwrap().forcing.x
        };
        let base = roll(0.0);
        let once = roll(-20.0) - base;
        let twice = roll(-40.0) - base;
        assert!((once - params.rear_wheel_inertia * -20.0 * 1.3).abs() < 1e-12);
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn condition_number_is_reported() {
        let params = RobotParams::table1();
        let (s, u) = drifting();
        let sys = assemble_eom(&s, &u, &params).unwrap();
        assert!(sys.condition >= 1.0 && sys.condition < 1e6);
    }
}
