//! Steering projection and the front-wheel rolling constraints.

use super::DynamicsError;
use crate::params::RobotParams;
use nalgebra::Vector2;

/// Ground projection `delta_f` of the steering angle: `tan(delta_f) cos(phi) = tan(delta) cos(lambda)`.
pub fn project_steering(delta: f64, phi: f64, params: &RobotParams) -> Result<f64, DynamicsError> {
    let cos_phi = phi.cos();
    if cos_phi <= 0.0 {
        return Err(DynamicsError::SteeringDomain { phi });
    }
    Ok((delta.tan() * params.caster.cos() / cos_phi).atan())
}

/// Inverse of [`project_steering`] at fixed roll.
pub fn unproject_steering(delta_f: f64, phi: f64, params: &RobotParams) -> f64 {
    (delta_f.tan() * phi.cos() / params.caster.cos()).atan()
}

/// Time derivative of the projected steering angle, by implicit differentiation
/// of the projection identity.
pub fn steering_projection_rate(
    delta: f64,
    delta_dot: f64,
    phi: f64,
    phi_dot: f64,
    params: &RobotParams,
) -> Result<f64, DynamicsError> {
    let delta_f = project_steering(delta, phi, params)?;
    Ok(projection_rate_at(delta, delta_dot, phi, phi_dot, delta_f, params))
}

// sec^2(df) cos(phi) d(df) - tan(df) sin(phi) d(phi) = sec^2(delta) cos(lambda) d(delta)
pub(crate) fn projection_rate_at(
    delta: f64,
    delta_dot: f64,
    phi: f64,
    phi_dot: f64,
    delta_f: f64,
    params: &RobotParams,
) -> f64 {
    let cos_df = delta_f.cos();
    let cos_d = delta.cos();
    let numerator =
        delta_dot * params.caster.cos() / (cos_d * cos_d) + delta_f.tan() * phi.sin() * phi_dot;
    numerator * cos_df * cos_df / phi.cos()
}

/// Rear contact point velocity `(v_rx, v_ry)` in the yaw frame implied by a
/// purely rolling front wheel. Forward travel has `omega_f < 0`.
pub fn rear_contact_velocity(
    psi_dot: f64,
    omega_f: f64,
    delta_f: f64,
    params: &RobotParams,
) -> Vector2<f64> {
    let (sin_df, cos_df) = delta_f.sin_cos();
    let r = params.wheel_radius;
    Vector2::new(
        -omega_f * r * cos_df,
        -psi_dot * params.wheelbase - omega_f * r * sin_df,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> RobotParams {
        RobotParams::table1()
    }

    #[test]
    fn zero_steering_projects_to_zero() {
        for phi in [-0.5, 0.0, 0.3] {
            assert_eq!(project_steering(0.0, phi, &p()).unwrap(), 0.0);
            assert_eq!(unproject_steering(0.0, phi, &p()), 0.0);
        }
    }

    #[test]
    fn identity_without_caster_and_roll() {
        let params = RobotParams { caster: 0.0, ..p() };
        for delta in [-0.4, 0.1, 0.7] {
            assert_relative_eq!(project_steering(delta, 0.0, &params).unwrap(), delta, epsilon = 1e-15);
        }
    }

    #[test]
    fn fifteen_degrees_with_table1_caster() {
        // atan(tan 15deg * cos 25deg)
        let df = project_steering(15f64.to_radians(), 0.0, &p()).unwrap();
        assert_relative_eq!(df.to_degrees(), 13.6497, epsilon = 1e-4);
        let back = unproject_steering(df, 0.0, &p());
        assert_relative_eq!(back.to_degrees(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_keeps_sign() {
        for delta in [-0.6, -0.1, 0.1, 0.6] {
            let df = project_steering(delta, 0.2, &p()).unwrap();
            assert_eq!(df.signum(), delta.signum());
        }
    }

    #[test]
    fn round_trip_grid() {
        for d in [-15.0, -10.0, -5.0, 5.0, 10.0, 15.0_f64] {
            for phi in [-10.0, 0.0, 10.0_f64] {
                let delta = d.to_radians();
                let phi = phi.to_radians();
                let df = project_steering(delta, phi, &p()).unwrap();
                assert!((unproject_steering(df, phi, &p()) - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn domain_error_when_lying_flat() {
        assert!(matches!(
            project_steering(0.1, std::f64::consts::FRAC_PI_2 + 0.01, &p()),
            Err(DynamicsError::SteeringDomain { .. })
        ));
    }

    #[test]
    fn stationary_steering_has_zero_rate() {
        assert_eq!(steering_projection_rate(0.3, 0.0, 0.2, 0.0, &p()).unwrap(), 0.0);
    }

    #[test]
    fn rate_matches_finite_differences() {
        let (delta, delta_dot, phi, phi_dot) = (0.25, 0.8, -0.3, 1.7);
        let rate = steering_projection_rate(delta, delta_dot, phi, phi_dot, &p()).unwrap();
        let eps = 1e-6;
        let fwd = project_steering(delta + eps * delta_dot, phi + eps * phi_dot, &p()).unwrap();
        let bwd = project_steering(delta - eps * delta_dot, phi - eps * phi_dot, &p()).unwrap();
        assert_relative_eq!(rate, (fwd - bwd) / (2.0 * eps), epsilon = 1e-8);
    }

    #[test]
    fn unit_steering_rate_at_fifteen_degrees() {
        // d/dt atan(k tan delta) = k sec^2(delta) / (1 + k^2 tan^2 delta), k = cos 25deg.
        // Frozen from a central difference of project_steering (h = 1e-6): 0.917282.
        let rate = steering_projection_rate(15f64.to_radians(), 1.0, 0.0, 0.0, &p()).unwrap();
        assert_relative_eq!(rate, 0.917282, epsilon = 1e-6);
    }

    #[test]
    fn rear_velocity_examples() {
        assert_eq!(rear_contact_velocity(0.0, 0.0, 0.3, &p()), Vector2::zeros());
        let v = rear_contact_velocity(0.0, -10.0, 0.0, &p());
        assert_relative_eq!(v.x, 1.0, epsilon = 1e-15);
        assert_relative_eq!(v.y, 0.0, epsilon = 1e-15);
        let v = rear_contact_velocity(1.5, -10.0, 13.66f64.to_radians(), &p());
        assert_relative_eq!(v.x, 0.9717, epsilon = 1e-4);
        assert_relative_eq!(v.y, -0.3669, epsilon = 1e-4);
    }

    #[test]
    fn rolling_residuals_vanish() {
        let params = p();
        for (psi_dot, omega_f, df) in [(1.2, -23.0, -0.24), (-0.7, 5.0, 0.4), (0.0, -1.0, 0.0)] {
            let v = rear_contact_velocity(psi_dot, omega_f, df, &params);
            let r = params.wheel_radius;
            assert_eq!(v.x + omega_f * r * df.cos(), 0.0);
            assert!((v.y + psi_dot * params.wheelbase + omega_f * r * df.sin()).abs() < 1e-15);
        }
    }
}
