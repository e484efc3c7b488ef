//! Geometric equilibrium solver.
//!
//! Both wheels travel on circles about a common centre. At the friction limit
//! the rear contact circles at radius `mu g / psi_dot^2`, the front wheel
//! rolls perpendicular to its radius line, and a small-roll moment balance
//! gives the lean. The projected steering angle is the only unknown and is
//! found by fixed-point iteration on the steering mismatch.

use super::{Equilibrium, EquilibriumError, EquilibriumPoint, Geometry, Method};
use crate::params::RobotParams;
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdesaOptions {
    /// Stop when `|delta - delta_ss|` falls below this [rad].
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation factor, halved whenever the mismatch grows.
    pub relaxation: f64,
}

impl Default for AdesaOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 100, relaxation: 1.0 }
    }
}

/// Equilibrium at steering angle `delta_ss` and yaw rate `psi_dot_ss`.
pub fn solve_adesa(
    delta_ss: f64,
    psi_dot_ss: f64,
    params: &RobotParams,
    options: &AdesaOptions,
) -> Result<EquilibriumPoint, EquilibriumError> {
    if !delta_ss.is_finite() || !psi_dot_ss.is_finite() {
        return Err(EquilibriumError::InvalidSpec("non-finite steering angle or yaw rate".into()));
    }
    if psi_dot_ss == 0.0 {
        return Err(EquilibriumError::Infeasible("zero yaw rate has no turning circle".into()));
    }
    if delta_ss.abs() >= FRAC_PI_2 {
        return Err(EquilibriumError::Infeasible(format!("steering angle {delta_ss} outside (-pi/2, pi/2)")));
    }

    let p = params;
    let side = psi_dot_ss.signum();
    let yaw_sq = psi_dot_ss * psi_dot_ss;
    let rear_radius = p.mu * p.gravity / yaw_sq;
    let speed = psi_dot_ss.abs() * rear_radius;
    let (m, h, r) = (p.mass, p.com_height, p.wheel_radius);
    let lean_den = m * h * h * yaw_sq + m * p.gravity * h;
    let cos_caster = p.caster.cos();

    let mut delta_f = delta_ss;
    let mut alpha = options.relaxation;
    let mut prev = f64::INFINITY;
    for iteration in 1..=options.max_iter {
        let (sin_df, cos_df) = delta_f.sin_cos();
        // Triangle rear contact / front contact / turning centre. The angle at
        // the front contact is pi/2 - side * delta_f; the law of sines gives
        // the angle at the centre, and the angle at the rear contact follows.
        let sin_centre = p.wheelbase * cos_df / rear_radius;
        if sin_centre.abs() > 1.0 {
            return Err(EquilibriumError::Infeasible(format!(
                "wheelbase does not fit the friction-limited circle (sin = {sin_centre:.4})"
            )));
        }
        let cos_centre = (1.0 - sin_centre * sin_centre).sqrt();
        let sin_rear = cos_df * cos_centre + side * sin_df * sin_centre;
        let cos_rear = cos_df * sin_centre - side * sin_df * cos_centre;
        if !(sin_rear > 1e-9) {
            return Err(EquilibriumError::Infeasible(format!(
                "turning centre behind the rear wheel (sin = {sin_rear:.3e})"
            )));
        }
        let v_rx = speed * sin_rear;
        let omega_r = -speed / (r * sin_rear);
        let omega_f = -v_rx / (r * cos_df);
        let phi = (m * h * psi_dot_ss * v_rx - p.rear_wheel_inertia * omega_r * psi_dot_ss) / lean_den;
        if !(phi.abs() < FRAC_PI_2) {
            return Err(EquilibriumError::Infeasible(format!("roll balance needs {phi:.3} rad of lean")));
        }
        let delta = (sin_df / cos_df * phi.cos() / cos_caster).atan();
        let err = delta - delta_ss;

        if err.abs() <= options.tol {
            let v_ry = -side * speed * cos_rear;
            return Ok(EquilibriumPoint {
                xi: Equilibrium { delta, phi, psi_dot: psi_dot_ss, omega_f, omega_r },
                residual_norm: err.abs(),
                iterations: iteration,
                method: Method::Adesa,
                geometry: Geometry {
                    delta_f,
                    sideslip: v_ry.atan2(v_rx),
                    rear_radius,
                    rear_speed: speed,
                },
                drifting: true,
            });
        }
        if !err.is_finite() {
            return Err(EquilibriumError::Infeasible("steering iteration produced a non-finite angle".into()));
        }
        if err.abs() > prev {
            alpha *= 0.5;
        }
        prev = err.abs();
        delta_f -= alpha * err;
    }
    Err(EquilibriumError::NonConvergence {
        iterations: options.max_iter,
        residual: prev,
        best: Box::new(EquilibriumPoint {
            xi: Equilibrium { delta: delta_ss, psi_dot: psi_dot_ss, ..Equilibrium::default() },
            residual_norm: prev,
            iterations: options.max_iter,
            method: Method::Adesa,
            geometry: Geometry { delta_f, sideslip: f64::NAN, rear_radius, rear_speed: speed },
            drifting: true,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::kinematic_geometry;

    fn solve(delta_deg: f64, psi_dot: f64) -> Result<EquilibriumPoint, EquilibriumError> {
        solve_adesa(delta_deg.to_radians(), psi_dot, &RobotParams::table1(), &AdesaOptions::default())
    }

    #[test]
    fn friction_limited_radius() {
        let pt = solve(-15.0, 1.5).unwrap();
        assert!((pt.geometry.rear_radius - 0.3 * 9.81 / 2.25).abs() < 1e-12);
        assert!((pt.geometry.rear_radius - 1.3080).abs() < 1e-4);
        assert!((pt.xi.delta - (-15f64).to_radians()).abs() <= 1e-6);
    }

    #[test]
    fn kinematics_are_consistent_with_the_rolling_model() {
        // The geometric point satisfies the exact rolling constraints, so the
        // kinematic sideslip and speed match the reported ones.
        let params = RobotParams::table1();
        let pt = solve(-15.0, 1.2).unwrap();
        let (geo, drifting) = kinematic_geometry(&pt.xi, &params).unwrap();
        assert!(drifting);
        assert!((geo.delta_f - pt.geometry.delta_f).abs() < 1e-9);
        assert!((geo.rear_speed - pt.geometry.rear_speed).abs() < 1e-9);
        assert!((geo.sideslip - pt.geometry.sideslip).abs() < 1e-9);
    }

    #[test]
    fn counter_steering_point_signs() {
        let pt = solve(-15.0, 1.2).unwrap();
        assert!(pt.xi.phi > 0.0);
        assert!(pt.xi.omega_f < 0.0 && pt.xi.omega_r < 0.0);
        // Slides outward: the contact velocity points left of the heading for a right turn.
        assert!(pt.geometry.sideslip < 0.0);
        assert!(pt.xi.is_counter_steering());
    }

    #[test]
    fn mirror_symmetric() {
        let a = solve(-12.0, 1.4).unwrap();
        let b = solve(12.0, -1.4).unwrap();
        let m = a.xi.mirrored();
        for (x, y) in m.to_array().iter().zip(b.xi.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.geometry.sideslip + b.geometry.sideslip).abs() < 1e-12);
    }

    #[test]
    fn zero_yaw_rate_is_infeasible() {
        assert!(matches!(solve(-15.0, 0.0), Err(EquilibriumError::Infeasible(_))));
    }

    #[test]
    fn tight_circle_is_infeasible() {
        // mu g / psi_dot^2 far below the wheelbase.
        assert!(matches!(solve(-15.0, 6.0), Err(EquilibriumError::Infeasible(_))));
    }
}
