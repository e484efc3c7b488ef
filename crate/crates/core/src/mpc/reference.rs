//! Equilibrium references for steady drifting and for transitions between drifts.

use crate::dynamics::ControlInput;
use crate::equilibrium::{
    residual, solve_adesa, solve_numeric, AdesaOptions, Equilibrium, EquilibriumError, EquilibriumSpec, Method,
};
use crate::params::RobotParams;
use nalgebra::{Vector2, Vector5};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

pub const REFERENCE_HEADER: [&str; 8] =
    ["t", "delta", "phi", "psi_dot", "omega_f", "delta_dot", "omega_r", "feasible"];

/// Linear ramp from `from` to `to` over `[t_start, t_end]`, constant outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ramp {
    pub from: f64,
    pub to: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Ramp {
    pub fn value(&self, t: f64) -> f64 {
        if t < self.t_start {
            self.from
        } else if t >= self.t_end {
            self.to
        } else {
            self.from + (self.to - self.from) * (t - self.t_start) / (self.t_end - self.t_start)
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        if t >= self.t_start && t < self.t_end {
            (self.to - self.from) / (self.t_end - self.t_start)
        } else {
            0.0
        }
    }
}

/// Ramp windows for the steering angle and the yaw rate, and the length of
/// the planned reference [s].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionSchedule {
    pub delta_window: [f64; 2],
    pub psi_dot_window: [f64; 2],
    pub duration: f64,
}

impl Default for TransitionSchedule {
    fn default() -> Self {
        Self { delta_window: [2.0, 7.0], psi_dot_window: [2.0, 20.0], duration: 25.0 }
    }
}

impl TransitionSchedule {
    fn validate(&self) -> Result<(), EquilibriumError> {
        let ok = |w: &[f64; 2]| w[0].is_finite() && w[1].is_finite() && w[0] >= 0.0 && w[0] <= w[1];
        if !ok(&self.delta_window) || !ok(&self.psi_dot_window) {
            return Err(EquilibriumError::InvalidSpec("ramp windows must satisfy 0 <= start <= end".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(EquilibriumError::InvalidSpec(format!("bad reference duration {}", self.duration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub xi: Equilibrium,
    /// `(delta_dot, omega_r)` that holds the sample: the ramp slope and the equilibrium wheel speed.
    pub u_ss: ControlInput,
    /// False when the equilibrium solve failed and the previous sample was held.
    pub feasible: bool,
}

/// Equilibria at uniform times `k * dt`. Queries before the first or after
/// the last sample hold the end value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub samples: Vec<ReferenceSample>,
    pub target: Equilibrium,
}

impl ReferenceTrajectory {
    /// A single equilibrium held forever.
    pub fn constant(xi: Equilibrium, dt: f64) -> Self {
        let sample = ReferenceSample { t: 0.0, xi, u_ss: xi.input(), feasible: true };
        Self { dt, samples: vec![sample], target: xi }
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn infeasible_count(&self) -> usize {
        self.samples.iter().filter(|s| !s.feasible).count()
    }

    /// One row per sample; `comments` become leading `# ` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REFERENCE_HEADER)?;
        for s in &self.samples {
            let x = &s.xi;
            let mut row: Vec<String> = [s.t, x.delta, x.phi, x.psi_dot, x.omega_f, s.u_ss.delta_dot, s.u_ss.omega_r]
                .iter()
                .map(|v| format!("{v:.10e}"))
                .collect();
            row.push(s.feasible.to_string());
            w.write_record(&row)?;
        }
        w.flush()
    }

    /// Interpolated reference state and input at time `t`.
    pub fn at(&self, t: f64) -> (Vector5<f64>, Vector2<f64>) {
        let n = self.samples.len();
        let pos = (t / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let a = &self.samples[i];
        let f = pos - i as f64;
        if i + 1 >= n || f == 0.0 {
            return (a.xi.state().to_vector(), a.u_ss.to_vector());
        }
        let b = &self.samples[i + 1];
        (
            a.xi.state().to_vector().lerp(&b.xi.state().to_vector(), f),
            a.u_ss.to_vector().lerp(&b.u_ss.to_vector(), f),
        )
    }
}

fn solve_point(
    delta: f64,
    psi_dot: f64,
    method: Method,
    guess: Option<Equilibrium>,
    params: &RobotParams,
) -> Result<Equilibrium, EquilibriumError> {
    match method {
        Method::Adesa => solve_adesa(delta, psi_dot, params, &AdesaOptions::default()).map(|p| p.xi),
        Method::Numeric => {
            let mut spec = EquilibriumSpec::steering_and_yaw_rate(delta, psi_dot)?;
            if let Some(g) = guess {
                spec = spec.with_guess(Equilibrium { delta, psi_dot, ..g });
            }
            let pt = solve_numeric(&spec, params)?;
            if pt.drifting {
                Ok(pt.xi)
            } else {
                Err(EquilibriumError::Infeasible("solution is not a drift".into()))
            }
        }
    }
}

/// Plans a transition from `xi_from` to the drift at `(delta_target,
/// psi_dot_target)`. Both set-points ramp linearly over their windows and an
/// equilibrium is solved at every `dt` sample. Samples whose set-points equal
/// the source reuse `xi_from`; samples without a solution hold the last
/// feasible one and are flagged.
pub fn plan_transition(
    xi_from: &Equilibrium,
    delta_target: f64,
    psi_dot_target: f64,
    schedule: &TransitionSchedule,
    dt: f64,
    method: Method,
    params: &RobotParams,
) -> Result<ReferenceTrajectory, EquilibriumError> {
    schedule.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EquilibriumError::InvalidSpec(format!("sample step must be positive, got {dt}")));
    }
    residual(xi_from, params)?;
    if xi_from.psi_dot == 0.0 {
        return Err(EquilibriumError::Infeasible("source is not a turning equilibrium".into()));
    }
    let target = solve_point(delta_target, psi_dot_target, method, Some(*xi_from), params)?;

    let delta = Ramp { from: xi_from.delta, to: delta_target, t_start: schedule.delta_window[0], t_end: schedule.delta_window[1] };
    let psi_dot = Ramp {
        from: xi_from.psi_dot,
        to: psi_dot_target,
        t_start: schedule.psi_dot_window[0],
        t_end: schedule.psi_dot_window[1],
    };
    let count = (schedule.duration / dt).round() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut last = *xi_from;
    for k in 0..count {
        let t = k as f64 * dt;
        let (d, w) = (delta.value(t), psi_dot.value(t));
        let solved = if d == xi_from.delta && w == xi_from.psi_dot {
            Ok(*xi_from)
        } else if d == delta_target && w == psi_dot_target {
            Ok(target)
        } else {
            solve_point(d, w, method, Some(last), params)
        };
        let (xi, feasible) = match solved {
            Ok(xi) => (xi, true),
            Err(_) => (last, false),
        };
        last = xi;
        let u_ss = ControlInput { delta_dot: if feasible { delta.slope(t) } else { 0.0 }, omega_r: xi.omega_r };
        samples.push(ReferenceSample { t, xi, u_ss, feasible });
    }
    Ok(ReferenceTrajectory { dt, samples, target })
}
