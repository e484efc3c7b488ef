//! Fixed-step closed-loop simulation of the drifting model.
//!
//! State and pose are integrated together with classical RK4. The rear
//! contact friction comes from an optional block terrain, looked up once per
//! step at the rear contact position. A controller is sampled on a slower
//! period and its input is held between updates.

mod terrain;

pub use terrain::{TerrainError, TerrainGrid};

use crate::dynamics::{
    evaluate, pose_rate_from_velocity, ContactForces, ControlInput, DynamicsError, Evaluation, Pose,
    State,
};
use crate::params::RobotParams;
use nalgebra::{Vector3, Vector5};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Output of one controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub input: ControlInput,
    pub iterations: usize,
    pub objective: f64,
    /// Set when the optimizer stopped before converging.
    pub degraded: bool,
}

impl ControlOutput {
    pub fn fixed(input: ControlInput) -> Self {
        Self { input, iterations: 0, objective: 0.0, degraded: false }
    }
}

pub trait Controller {
    fn control(&mut self, t: f64, state: &State, pose: &Pose) -> Result<ControlOutput, String>;
}

/// Holds one input forever.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInput(pub ControlInput);

impl Controller for ConstantInput {
    fn control(&mut self, _t: f64, _state: &State, _pose: &Pose) -> Result<ControlOutput, String> {
        Ok(ControlOutput::fixed(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Integration step [s].
    pub dt: f64,
    /// Controller sampling period [s]; an integer multiple of `dt`.
    pub control_period: f64,
    pub duration: f64,
    /// Friction field; `None` uses the parameter set's `mu` everywhere.
    pub terrain: Option<TerrainGrid>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, control_period: 1e-2, duration: 10.0, terrain: None }
    }
}

impl SimConfig {
    fn steps(&self) -> Result<(usize, usize), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(SimError::Config(format!("duration must be non-negative, got {}", self.duration)));
        }
        let ratio = self.control_period / self.dt;
        let hold = ratio.round();
        if !(hold >= 1.0) || (ratio - hold).abs() > 1e-9 * hold {
            return Err(SimError::Config(format!(
                "control_period {} is not a positive integer multiple of dt {}",
                self.control_period, self.dt
            )));
        }
        if let Some(t) = &self.terrain {
            t.validate()?;
        }
        Ok(((self.duration / self.dt + 1e-9).floor() as usize, hold as usize))
    }
}

fn local_params(params: &RobotParams, terrain: Option<&TerrainGrid>, pose: &Pose) -> RobotParams {
    match terrain {
        Some(t) => params.with_mu(t.friction_at(pose.x, pose.y)),
        None => *params,
    }
}

fn stage(state: &State, pose: &Pose, input: &ControlInput, params: &RobotParams) -> Result<(Vector5<f64>, Vector3<f64>, Evaluation), DynamicsError> {
    let eval = evaluate(state, input, params)?;
    let pose_rate = pose_rate_from_velocity(pose, &eval.rear_velocity, state.psi_dot);
    Ok((eval.derivative, pose_rate, eval))
}

/// RK4 step given the first-stage evaluation at `(state, pose)`.
fn rk4_from(
    state: &State,
    pose: &Pose,
    input: &ControlInput,
    dt: f64,
    params: &RobotParams,
    k1: (Vector5<f64>, Vector3<f64>),
) -> Result<(State, Pose), DynamicsError> {
    let (x, p) = (state.to_vector(), pose.to_vector());
    let at = |dx: Vector5<f64>, dp: Vector3<f64>| -> Result<(Vector5<f64>, Vector3<f64>), DynamicsError> {
        let s = State::from_vector(&(x + dx));
        let q = Pose::from_vector(&(p + dp));
        stage(&s, &q, input, params).map(|(a, b, _)| (a, b))
    };
    let k2 = at(k1.0 * (0.5 * dt), k1.1 * (0.5 * dt))?;
    let k3 = at(k2.0 * (0.5 * dt), k2.1 * (0.5 * dt))?;
    let k4 = at(k3.0 * dt, k3.1 * dt)?;
    let x_next = x + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
    let p_next = p + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
    Ok((State::from_vector(&x_next), Pose::from_vector(&p_next)))
}

/// One RK4 step of state and pose with the input held. Friction is read from
/// `terrain` at the starting rear contact position and kept for the whole step.
pub fn step(
    state: &State,
    pose: &Pose,
    input: &ControlInput,
    dt: f64,
    terrain: Option<&TerrainGrid>,
    params: &RobotParams,
) -> Result<(State, Pose), DynamicsError> {
    let local = local_params(params, terrain, pose);
    let (dx, dp, _) = stage(state, pose, input, &local)?;
    rk4_from(state, pose, input, dt, &local, (dx, dp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub state: State,
    pub pose: Pose,
    /// Input held over `[t, t + dt)`.
    pub input: ControlInput,
    pub forces: ContactForces,
    pub mu: f64,
}

/// One controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRecord {
    pub t: f64,
    pub output: ControlOutput,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    /// The plant left the model's validity domain at `t`.
    Dynamics { t: f64, error: DynamicsError, state: State },
    Controller { t: f64, message: String },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }

    pub fn describe(&self) -> String {
        match self {
            Termination::Completed => "completed".into(),
            Termination::Dynamics { t, error, .. } => format!("dynamics at t = {t:.3} s: {error}"),
            Termination::Controller { t, message } => format!("controller at t = {t:.3} s: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub samples: Vec<LogSample>,
    pub controls: Vec<ControlRecord>,
    pub termination: Termination,
}

pub const LOG_HEADER: [&str; 18] = [
    "t", "delta", "phi", "phi_dot", "psi_dot", "omega_f", "x", "y", "psi", "delta_dot", "omega_r",
    "n_f", "n_r", "f_fx", "f_fy", "f_rx", "f_ry", "mu",
];

pub const CONTROL_HEADER: [&str; 7] =
    ["t", "delta_dot", "omega_r", "iterations", "objective", "degraded", "wall_time_ns"];

fn num(v: f64) -> String {
    format!("{v:.10e}")
}

impl TrajectoryLog {
    pub fn last(&self) -> Option<&LogSample> {
        self.samples.last()
    }

    /// Samples with `t` in `[from, to]`.
    pub fn window(&self, from: f64, to: f64) -> impl Iterator<Item = &LogSample> {
        self.samples.iter().filter(move |s| s.t >= from - 1e-12 && s.t <= to + 1e-12)
    }

    /// One row per integration step. `comments` become leading `# ` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(out, "# termination: {}", self.termination.describe())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LOG_HEADER)?;
        for s in &self.samples {
            let f = &s.forces;
            let row = [
                s.t, s.state.delta, s.state.phi, s.state.phi_dot, s.state.psi_dot, s.state.omega_f,
                s.pose.x, s.pose.y, s.pose.psi, s.input.delta_dot, s.input.omega_r, f.n_f, f.n_r,
                f.f_fx, f.f_fy, f.f_rx, f.f_ry, s.mu,
            ];
            w.write_record(row.iter().map(|v| num(*v)))?;
        }
        w.flush()
    }

    /// Controller diagnostics, one row per update.
    pub fn write_controls_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CONTROL_HEADER)?;
        for c in &self.controls {
            w.write_record([
                num(c.t),
                num(c.output.input.delta_dot),
                num(c.output.input.omega_r),
                c.output.iterations.to_string(),
                num(c.output.objective),
                c.output.degraded.to_string(),
                c.wall_time_ns.to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Runs `controller` against the plant from `(x0, pose0)`. Plant and
/// controller failures end the run early and are recorded in the log.
pub fn run_closed_loop<C: Controller + ?Sized>(
    controller: &mut C,
    x0: State,
    pose0: Pose,
    config: &SimConfig,
    params: &RobotParams,
) -> Result<TrajectoryLog, SimError> {
    let (steps, hold) = config.steps()?;
    let terrain = config.terrain.as_ref();
    let mut log = TrajectoryLog {
        dt: config.dt,
        samples: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps / hold + 1),
        termination: Termination::Completed,
    };
    let (mut state, mut pose) = (x0, pose0);
    let mut input = ControlInput::default();

    for k in 0..=steps {
        let t = k as f64 * config.dt;
        if k % hold == 0 {
            let start = std::time::Instant::now();
            match controller.control(t, &state, &pose) {
                Ok(out) => {
                    input = out.input;
                    log.controls.push(ControlRecord {
                        t,
                        output: out,
                        wall_time_ns: start.elapsed().as_nanos() as u64,
                    });
                }
                Err(message) => {
                    log.termination = Termination::Controller { t, message };
                    break;
                }
            }
        }
        let local = local_params(params, terrain, &pose);
        let (dx, dp, eval) = match stage(&state, &pose, &input, &local) {
            Ok(s) => s,
            Err(error) => {
                log.termination = Termination::Dynamics { t, error, state };
                break;
            }
        };
        log.samples.push(LogSample { t, state, pose, input, forces: eval.forces, mu: local.mu });
        if k == steps {
            break;
        }
        match rk4_from(&state, &pose, &input, config.dt, &local, (dx, dp)) {
            Ok((s, p)) => {
                state = s;
                pose = p;
            }
            Err(error) => {
                log.termination = Termination::Dynamics { t, error, state };
                break;
            }
        }
    }
    Ok(log)
}
