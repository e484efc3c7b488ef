//! Damped Newton on the full-model equilibrium equations.

use super::{
    kinematic_geometry, residual, solve_adesa, AdesaOptions, Equilibrium, EquilibriumError,
    EquilibriumPoint, EquilibriumSpec, Method, Var,
};
use crate::params::RobotParams;
use nalgebra::{Matrix3, Vector3};
use std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Converged when the acceleration norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative central-difference step for the Jacobian.
    pub fd_step: f64,
    pub max_backtracks: usize,
    /// Line-search failures tolerated before giving up on the region.
    pub max_collapses: usize,
    /// Largest Newton step: this many radians for angles, this fraction of
    /// `max(|value|, 1)` for rates. Longer steps are shortened along their direction.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, fd_step: 1e-6, max_backtracks: 20, max_collapses: 3, max_step: 0.25 }
    }
}

struct Problem<'a> {
    base: Equilibrium,
    free: [Var; 3],
    params: &'a RobotParams,
}

impl Problem<'_> {
    fn point(&self, z: &Vector3<f64>) -> Equilibrium {
        let mut xi = self.base;
        for (k, v) in self.free.iter().enumerate() {
            xi.set(*v, z[k]);
        }
        xi
    }

    fn eval(&self, z: &Vector3<f64>) -> Option<Vector3<f64>> {
        let xi = self.point(z);
        if xi.delta.abs() >= FRAC_PI_2 || xi.phi.abs() >= FRAC_PI_2 {
            return None;
        }
        residual(&xi, self.params).ok().filter(|r| r.iter().all(|v| v.is_finite()))
    }

    fn step_scale(&self, z: &Vector3<f64>, step: &Vector3<f64>, max_step: f64) -> f64 {
        let mut scale: f64 = 1.0;
        for (k, v) in self.free.iter().enumerate() {
            let cap = if v.is_angle() { max_step } else { max_step * z[k].abs().max(1.0) };
            if step[k].abs() > cap {
                scale = scale.min(cap / step[k].abs());
            }
        }
        scale
    }

    fn jacobian(&self, z: &Vector3<f64>, r0: &Vector3<f64>, rel: f64) -> Option<Matrix3<f64>> {
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let h = rel * z[j].abs().max(1.0);
            let mut zp = *z;
            let mut zm = *z;
            zp[j] += h;
            zm[j] -= h;
            let col = match (self.eval(&zp), self.eval(&zm)) {
                (Some(p), Some(m)) => (p - m) / (2.0 * h),
                (Some(p), None) => (p - r0) / h,
                (None, Some(m)) => (r0 - m) / h,
                (None, None) => return None,
            };
            jac.set_column(j, &col);
        }
        Some(jac)
    }
}

fn default_guess(spec: &EquilibriumSpec, params: &RobotParams) -> Equilibrium {
    let psi_dot = spec.fixed_value(Var::PsiDot).unwrap_or_else(|| match spec.fixed_value(Var::Delta) {
        Some(d) if d != 0.0 => -d.signum() * 1.2,
        _ => 1.2,
    });
    let delta = spec.fixed_value(Var::Delta).unwrap_or(if psi_dot != 0.0 {
        -psi_dot.signum() * 10f64.to_radians()
    } else {
        0.0
    });
    solve_adesa(delta, psi_dot, params, &AdesaOptions::default())
        .map(|p| p.xi)
        .unwrap_or(Equilibrium {
            delta,
            phi: 0.3 * psi_dot.signum(),
            psi_dot,
            omega_f: -20.0,
            omega_r: -25.0,
        })
}

/// Newton solve with default options.
pub fn solve_numeric(spec: &EquilibriumSpec, params: &RobotParams) -> Result<EquilibriumPoint, EquilibriumError> {
    solve_numeric_with(spec, params, &NewtonOptions::default())
}

/// Finds the three free variables of `spec` that zero the roll, yaw and
/// front-wheel accelerations. Without a guess in the spec, the geometric
/// solution (or a nominal drifting point) seeds the iteration.
pub fn solve_numeric_with(
    spec: &EquilibriumSpec,
    params: &RobotParams,
    options: &NewtonOptions,
) -> Result<EquilibriumPoint, EquilibriumError> {
    let mut base = spec.guess.unwrap_or_else(|| default_guess(spec, params));
    for (v, x) in spec.fixed() {
        base.set(*v, *x);
    }
    let problem = Problem { base, free: spec.free(), params };
    let mut z = Vector3::from_fn(|k, _| base.get(problem.free[k]));
    let mut r = match problem.eval(&z) {
        Some(r) => r,
        None => {
            residual(&problem.point(&z), params)?;
            return Err(EquilibriumError::Infeasible("initial guess outside the model envelope".into()));
        }
    };
    let mut norm = r.norm();
    let mut collapses = 0;

    for iteration in 0..options.max_iter {
        if norm <= options.tol {
            return finish(&problem, &z, norm, iteration, params);
        }
        let jac = problem
            .jacobian(&z, &r, options.fd_step)
            .ok_or(EquilibriumError::SingularJacobian { iteration })?;
        let step = jac
            .lu()
            .solve(&-r)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(EquilibriumError::SingularJacobian { iteration })?;
        let step = step * problem.step_scale(&z, &step, options.max_step);

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut smallest = None;
        for _ in 0..=options.max_backtracks {
            let trial = z + step * alpha;
            if let Some(rt) = problem.eval(&trial) {
                let nt = rt.norm();
                if nt < (1.0 - 1e-4 * alpha) * norm {
                    accepted = Some((trial, rt, nt));
                    break;
                }
                smallest = Some((trial, rt, nt));
            }
            alpha *= 0.5;
        }
        let (zt, rt, nt) = match accepted {
            Some(a) => a,
            None => {
                collapses += 1;
                if collapses >= options.max_collapses {
                    return Err(EquilibriumError::NoEquilibrium { collapses, residual: norm });
                }
                match smallest {
                    Some(s) => s,
                    None => return Err(EquilibriumError::NoEquilibrium { collapses, residual: norm }),
                }
            }
        };
        z = zt;
        r = rt;
        norm = nt;
    }
    if norm <= options.tol {
        return finish(&problem, &z, norm, options.max_iter, params);
    }
    let best = finish(&problem, &z, norm, options.max_iter, params)?;
    Err(EquilibriumError::NonConvergence {
        iterations: options.max_iter,
        residual: norm,
        best: Box::new(best),
    })
}

fn finish(
    problem: &Problem,
    z: &Vector3<f64>,
    norm: f64,
    iterations: usize,
    params: &RobotParams,
) -> Result<EquilibriumPoint, EquilibriumError> {
    let xi = problem.point(z);
    let (geometry, drifting) = kinematic_geometry(&xi, params)?;
    Ok(EquilibriumPoint { xi, residual_norm: norm, iterations, method: Method::Numeric, geometry, drifting })
}
