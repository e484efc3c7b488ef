//! Closed-loop scenarios: recovery of a steady drift, transition between
//! drifts, and steady drifting on a random friction field.

use crate::dynamics::{Pose, State};
use crate::equilibrium::{solve_numeric, Equilibrium, EquilibriumError, EquilibriumSpec, Method};
use crate::mpc::{
    plan_transition, InitMode, MpcConfig, MpcController, MpcError, MpcSolver, ReferenceTrajectory,
    TransitionSchedule,
};
use crate::params::RobotParams;
use crate::simulation::{run_closed_loop, SimConfig, SimError, TerrainGrid, TrajectoryLog};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Terrain seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("scenario equilibrium: {0}")]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Integration and control rates shared by all scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSettings {
    pub dt: f64,
    pub control_period: f64,
}

impl Default for LoopSettings {
    fn default() -> Self {
        let s = SimConfig::default();
        Self { dt: s.dt, control_period: s.control_period }
    }
}

impl LoopSettings {
    fn sim(&self, duration: f64, terrain: Option<TerrainGrid>) -> SimConfig {
        SimConfig { dt: self.dt, control_period: self.control_period, duration, terrain }
    }
}

/// Recovery from a roll perturbation of a counter-steering drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyScenario {
    pub delta_deg: f64,
    pub psi_dot: f64,
    pub roll_offset_deg: f64,
    pub duration: f64,
    /// All banded variables must stay inside their bands from this time on.
    pub settle_time: f64,
    /// Relative band half-width.
    pub band: f64,
    /// Start of the one-revolution window used for the circle fit.
    pub fit_start: f64,
}

impl Default for SteadyScenario {
    fn default() -> Self {
        Self {
            delta_deg: -15.0,
            psi_dot: 1.2,
            roll_offset_deg: 3.0,
            duration: 11.0,
            settle_time: 5.0,
            band: 0.02,
            fit_start: 5.0,
        }
    }
}

/// Ramped transition between two drifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionScenario {
    pub from_delta_deg: f64,
    pub from_psi_dot: f64,
    pub to_delta_deg: f64,
    pub to_psi_dot: f64,
    pub schedule: TransitionSchedule,
    /// Solver that fills the reference between the endpoints.
    pub reference_method: Method,
    /// Length of the final window checked against the target [s].
    pub settle_window: f64,
    pub band: f64,
}

impl Default for TransitionScenario {
    fn default() -> Self {
        Self {
            from_delta_deg: -15.0,
            from_psi_dot: 1.5,
            to_delta_deg: -5.0,
            to_psi_dot: 0.6,
            schedule: TransitionSchedule::default(),
            reference_method: Method::Adesa,
            settle_window: 2.0,
            band: 0.05,
        }
    }
}

/// Steady drifting on block friction unknown to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrictionScenario {
    pub delta_deg: f64,
    pub psi_dot: f64,
    pub duration: f64,
    pub terrain: TerrainGrid,
    /// Allowed relative yaw-rate deviation.
    pub yaw_band: f64,
}

impl Default for FrictionScenario {
    fn default() -> Self {
        Self {
            delta_deg: -15.0,
            psi_dot: 1.2,
            duration: 20.0,
            terrain: TerrainGrid { block_size: 0.5, mu_min: 0.25, mu_max: 0.35, seed: DEFAULT_SEED, origin: [0.0, 0.0] },
            yaw_band: 0.25,
        }
    }
}

/// Scenario file: every section optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mpc: MpcConfig,
    pub simulation: LoopSettings,
    pub steady: SteadyScenario,
    pub transition: TransitionScenario,
    pub friction: FrictionScenario,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.mpc.validate()?;
        cfg.friction.terrain.validate().map_err(SimError::from)?;
        Ok(cfg)
    }

    /// Full resolved configuration as TOML.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("ExperimentConfig serializes")
    }
}

/// Controller effort over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub solves: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub degraded: usize,
    pub mean_wall_ns: f64,
}

impl SolveStats {
    pub fn of(log: &TrajectoryLog) -> Self {
        let n = log.controls.len().max(1) as f64;
        Self {
            solves: log.controls.len(),
            mean_iterations: log.controls.iter().map(|c| c.output.iterations as f64).sum::<f64>() / n,
            max_iterations: log.controls.iter().map(|c| c.output.iterations).max().unwrap_or(0),
            degraded: log.controls.iter().filter(|c| c.output.degraded).count(),
            mean_wall_ns: log.controls.iter().map(|c| c.wall_time_ns as f64).sum::<f64>() / n,
        }
    }

    fn line(&self) -> String {
        format!(
            "solves {} | iterations mean {:.2} max {} | degraded {} | mean solve {:.0} us",
            self.solves,
            self.mean_iterations,
            self.max_iterations,
            self.degraded,
            self.mean_wall_ns / 1e3
        )
    }
}

/// Names of the banded variables, in [`banded`] order.
pub const BANDED: [&str; 5] = ["delta", "phi", "psi_dot", "omega_f", "omega_r"];

/// `(delta, phi, psi_dot, omega_f)` from the state and the applied `omega_r`.
pub fn banded(state: &State, omega_r: f64) -> [f64; 5] {
    [state.delta, state.phi, state.psi_dot, state.omega_f, omega_r]
}

fn relative_deviation(values: &[f64; 5], target: &Equilibrium) -> [f64; 5] {
    let t = target.to_array();
    let mut out = [0.0; 5];
    for i in 0..5 {
        out[i] = (values[i] - t[i]).abs() / t[i].abs();
    }
    out
}

/// Least-squares circle through planar points (algebraic fit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
    pub points: usize,
}

pub fn fit_circle(points: &[(f64, f64)]) -> Option<CircleFit> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len();
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => points[i].0,
        1 => points[i].1,
        _ => 1.0,
    });
    let b = DVector::from_fn(n, |i, _| -(points[i].0.powi(2) + points[i].1.powi(2)));
    let s = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let center = [-s[0] / 2.0, -s[1] / 2.0];
    let r2 = center[0].powi(2) + center[1].powi(2) - s[2];
    (r2 > 0.0).then(|| CircleFit { center, radius: r2.sqrt(), points: n })
}

fn numeric_drift(delta_deg: f64, psi_dot: f64, params: &RobotParams) -> Result<Equilibrium, ExperimentError> {
    let spec = EquilibriumSpec::steering_and_yaw_rate(delta_deg.to_radians(), psi_dot)?;
    let pt = solve_numeric(&spec, params)?;
    if !pt.drifting {
        return Err(ExperimentError::Config(format!("({delta_deg} deg, {psi_dot} rad/s) is not a drift")));
    }
    Ok(pt.xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadySummary {
    pub target: Equilibrium,
    /// Time from which every banded variable stays in its band; `None` if
    /// the run ends outside a band.
    pub settled_at: Option<f64>,
    pub settle_time: f64,
    pub band: f64,
    /// Largest relative deviation from `settle_time` to the end of the run.
    pub max_deviation_after_settle: [f64; 5],
    pub circle: Option<CircleFit>,
    pub predicted_radius: f64,
    pub termination: String,
    pub completed: bool,
    pub stats: SolveStats,
}

impl SteadySummary {
    pub fn settled(&self) -> bool {
        self.completed && self.settled_at.is_some_and(|t| t <= self.settle_time)
    }

    pub fn radius_error(&self) -> Option<f64> {
        self.circle.map(|c| (c.radius - self.predicted_radius) / self.predicted_radius)
    }

    pub fn lines(&self) -> Vec<String> {
        let x = &self.target;
        let mut out = vec![
            format!(
                "target: delta {:.6} phi {:.6} psi_dot {:.6} omega_f {:.6} omega_r {:.6}",
                x.delta, x.phi, x.psi_dot, x.omega_f, x.omega_r
            ),
            format!("termination: {}", self.termination),
            match self.settled_at {
                Some(t) => format!("inside {:.0}% bands from t = {t:.3} s", self.band * 100.0),
                None => format!("not inside {:.0}% bands at the end of the run", self.band * 100.0),
            },
        ];
        let devs: Vec<String> = BANDED
            .iter()
            .zip(self.max_deviation_after_settle)
            .map(|(n, d)| format!("{n} {:.3}%", d * 100.0))
            .collect();
        out.push(format!("max deviation after {} s: {}", self.settle_time, devs.join(", ")));
        match (self.circle, self.radius_error()) {
            (Some(c), Some(e)) => out.push(format!(
                "circle fit: radius {:.4} m vs mu g / psi_dot^2 = {:.4} m ({:+.2}%)",
                c.radius,
                self.predicted_radius,
                e * 100.0
            )),
            _ => out.push("circle fit: not enough samples".into()),
        }
        out.push(self.stats.line());
        out.push(format!("band check: {}", if self.settled() { "PASS" } else { "FAIL" }));
        out
    }
}

/// Steady-drift recovery from a roll offset.
pub fn run_steady(
    cfg: &ExperimentConfig,
    params: &RobotParams,
) -> Result<(TrajectoryLog, SteadySummary), ExperimentError> {
    let sc = &cfg.steady;
    let target = numeric_drift(sc.delta_deg, sc.psi_dot, params)?;
    let x0 = State { phi: target.phi + sc.roll_offset_deg.to_radians(), ..target.state() };
    let mut controller = MpcController::steady(MpcSolver::new(cfg.mpc.clone(), *params)?, target);
    let log = run_closed_loop(&mut controller, x0, Pose::default(), &cfg.simulation.sim(sc.duration, None), params)?;

    let mut settled_at = Some(0.0);
    let mut max_dev = [0.0f64; 5];
    for s in &log.samples {
        let dev = relative_deviation(&banded(&s.state, s.input.omega_r), &target);
        if dev.iter().any(|d| *d > sc.band) {
            settled_at = None;
        } else if settled_at.is_none() {
            settled_at = Some(s.t);
        }
        if s.t >= sc.settle_time - 1e-12 {
            for i in 0..5 {
                max_dev[i] = max_dev[i].max(dev[i]);
            }
        }
    }
    let revolution = 2.0 * PI / target.psi_dot.abs();
    let pts: Vec<(f64, f64)> =
        log.window(sc.fit_start, sc.fit_start + revolution).map(|s| (s.pose.x, s.pose.y)).collect();
    let covered = log.last().is_some_and(|s| s.t >= sc.fit_start + revolution - log.dt);
    let summary = SteadySummary {
        target,
        settled_at,
        settle_time: sc.settle_time,
        band: sc.band,
        max_deviation_after_settle: max_dev,
        circle: if covered { fit_circle(&pts) } else { None },
        predicted_radius: params.mu * params.gravity / target.psi_dot.powi(2),
        termination: log.termination.describe(),
        completed: log.termination.is_completed(),
        stats: SolveStats::of(&log),
    };
    Ok((log, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSummary {
    pub source: Equilibrium,
    /// Full-model equilibrium at the final set-points.
    pub target: Equilibrium,
    pub reference_method: Method,
    pub infeasible_samples: usize,
    pub settle_window: f64,
    pub band: f64,
    pub final_max_deviation: [f64; 5],
    /// Largest yaw-rate tracking error against the reference and its time.
    pub peak_yaw_error: (f64, f64),
    pub termination: String,
    pub completed: bool,
    pub stats: SolveStats,
}

impl TransitionSummary {
    pub fn settled(&self) -> bool {
        self.completed && self.final_max_deviation.iter().all(|d| *d <= self.band)
    }

    pub fn lines(&self) -> Vec<String> {
        let x = &self.target;
        let devs: Vec<String> = BANDED
            .iter()
            .zip(self.final_max_deviation)
            .map(|(n, d)| format!("{n} {:.3}%", d * 100.0))
            .collect();
        vec![
            format!(
                "target: delta {:.6} phi {:.6} psi_dot {:.6} omega_f {:.6} omega_r {:.6}",
                x.delta, x.phi, x.psi_dot, x.omega_f, x.omega_r
            ),
            format!(
                "reference: {} ({} held samples)",
                self.reference_method, self.infeasible_samples
            ),
            format!("termination: {}", self.termination),
            format!("final {} s deviation: {}", self.settle_window, devs.join(", ")),
            format!(
                "peak yaw-rate tracking error {:.4} rad/s at t = {:.2} s",
                self.peak_yaw_error.0, self.peak_yaw_error.1
            ),
            self.stats.line(),
            format!("band check: {}", if self.settled() { "PASS" } else { "FAIL" }),
        ]
    }
}

/// Source drift, target drift and planned reference of the transition.
pub fn plan_scenario_transition(
    cfg: &ExperimentConfig,
    params: &RobotParams,
) -> Result<(Equilibrium, Equilibrium, ReferenceTrajectory), ExperimentError> {
    let sc = &cfg.transition;
    let source = numeric_drift(sc.from_delta_deg, sc.from_psi_dot, params)?;
    let target = numeric_drift(sc.to_delta_deg, sc.to_psi_dot, params)?;
    let reference = plan_transition(
        &source,
        sc.to_delta_deg.to_radians(),
        sc.to_psi_dot,
        &sc.schedule,
        cfg.mpc.dt,
        sc.reference_method,
        params,
    )?;
    Ok((source, target, reference))
}

/// Ramped transition tracked by the MPC from the source drift.
pub fn run_transition(
    cfg: &ExperimentConfig,
    params: &RobotParams,
) -> Result<(TrajectoryLog, ReferenceTrajectory, TransitionSummary), ExperimentError> {
    let sc = &cfg.transition;
    let (source, target, reference) = plan_scenario_transition(cfg, params)?;
    let solver = MpcSolver::new(cfg.mpc.clone(), *params)?;
    let mut controller = MpcController::tracking(solver, reference.clone());
    let duration = sc.schedule.duration;
    let log = run_closed_loop(&mut controller, source.state(), Pose::default(), &cfg.simulation.sim(duration, None), params)?;

    let end = log.last().map_or(0.0, |s| s.t);
    let mut final_dev = [0.0f64; 5];
    for s in log.window(end - sc.settle_window, end) {
        let dev = relative_deviation(&banded(&s.state, s.input.omega_r), &target);
        for i in 0..5 {
            final_dev[i] = final_dev[i].max(dev[i]);
        }
    }
    let mut peak = (0.0, 0.0);
    for s in &log.samples {
        let e = (s.state.psi_dot - reference.at(s.t).0[3]).abs();
        if e > peak.0 {
            peak = (e, s.t);
        }
    }
    let summary = TransitionSummary {
        source,
        target,
        reference_method: sc.reference_method,
        infeasible_samples: reference.infeasible_count(),
        settle_window: sc.settle_window,
        band: sc.band,
        final_max_deviation: final_dev,
        peak_yaw_error: peak,
        termination: log.termination.describe(),
        completed: log.termination.is_completed() && end >= duration - log.dt,
        stats: SolveStats::of(&log),
    };
    Ok((log, reference, summary))
}

/// Objective histories of one transition solve with and without the
/// reference warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub t: f64,
    pub warm: Vec<f64>,
    pub cold: Vec<f64>,
    /// Objective both runs must reach, relative to the best of the two.
    pub tolerance: f64,
}

impl AblationSummary {
    fn best(&self) -> f64 {
        self.warm.iter().chain(&self.cold).copied().fold(f64::INFINITY, f64::min)
    }

    fn reach(&self, history: &[f64]) -> Option<usize> {
        let goal = self.best() + self.tolerance * self.best().abs().max(1e-12);
        history.iter().position(|j| *j <= goal)
    }

    /// Iterations after the initial rollout until the shared objective is reached.
    pub fn warm_iterations(&self) -> Option<usize> {
        self.reach(&self.warm)
    }

    pub fn cold_iterations(&self) -> Option<usize> {
        self.reach(&self.cold)
    }

    pub fn lines(&self) -> Vec<String> {
        let show = |v: Option<usize>| v.map_or("never".to_string(), |n| n.to_string());
        vec![
            format!("first transition solve at t = {:.2} s", self.t),
            format!("initial objective: warm {:.9e}, cold {:.9e}", self.warm[0], self.cold[0]),
            format!(
                "iterations to reach {:.9e} (rel. {:e}): warm {}, cold {}",
                self.best(),
                self.tolerance,
                show(self.warm_iterations()),
                show(self.cold_iterations())
            ),
        ]
    }
}

/// Drives the transition scenario to the start of the ramps, then solves
/// the first ramp horizon twice from fresh solvers: seeded by the
/// reference, and from the current state held.
pub fn warm_start_ablation(
    cfg: &ExperimentConfig,
    params: &RobotParams,
    tolerance: f64,
) -> Result<AblationSummary, ExperimentError> {
    let sc = &cfg.transition;
    let onset = sc.schedule.delta_window[0].min(sc.schedule.psi_dot_window[0]);
    let (source, _, reference) = plan_scenario_transition(cfg, params)?;
    let mut controller = MpcController::tracking(MpcSolver::new(cfg.mpc.clone(), *params)?, reference.clone());
    let log = run_closed_loop(&mut controller, source.state(), Pose::default(), &cfg.simulation.sim(onset, None), params)?;
    let state = log.last().map(|s| s.state).unwrap_or_else(|| source.state());
    let t = log.last().map_or(0.0, |s| s.t);

    let long = MpcConfig { max_sqp_iters: 100, tol: 1e-14, max_penalty_doublings: 0, ..cfg.mpc.clone() };
    let history = |mode| -> Result<Vec<f64>, ExperimentError> {
        let mut solver = MpcSolver::new(long.clone(), *params)?.with_first_init(mode);
        let sol = solver.solve_tracking(t, &state, &reference)?;
        Ok(sol.phases.into_iter().next().map(|p| p.objectives).unwrap_or_default())
    };
    Ok(AblationSummary { t, warm: history(InitMode::Reference)?, cold: history(InitMode::Cold)?, tolerance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionSummary {
    pub target: Equilibrium,
    pub seed: u64,
    pub yaw_band: f64,
    pub psi_dot_range: (f64, f64),
    pub worst_yaw_deviation: f64,
    pub mu_range: (f64, f64),
    pub duration: f64,
    pub simulated: f64,
    pub termination: String,
    pub completed: bool,
    pub stats: SolveStats,
}

impl FrictionSummary {
    pub fn bounded(&self) -> bool {
        self.completed && self.simulated >= self.duration - 1e-9 && self.worst_yaw_deviation <= self.yaw_band
    }

    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("seed {} | target psi_dot {:.4} rad/s", self.seed, self.target.psi_dot),
            format!("termination: {} after {:.3} s", self.termination, self.simulated),
            format!("local mu seen: [{:.4}, {:.4}]", self.mu_range.0, self.mu_range.1),
            format!(
                "psi_dot range [{:.4}, {:.4}] | worst deviation {:.2}% (band {:.0}%)",
                self.psi_dot_range.0,
                self.psi_dot_range.1,
                self.worst_yaw_deviation * 100.0,
                self.yaw_band * 100.0
            ),
            self.stats.line(),
            format!("bounded check: {}", if self.bounded() { "PASS" } else { "FAIL" }),
        ]
    }
}

/// Steady drifting on the block friction field, started at the nominal drift.
pub fn run_friction(
    cfg: &ExperimentConfig,
    params: &RobotParams,
) -> Result<(TrajectoryLog, FrictionSummary), ExperimentError> {
    let sc = &cfg.friction;
    let target = numeric_drift(sc.delta_deg, sc.psi_dot, params)?;
    let mut controller = MpcController::steady(MpcSolver::new(cfg.mpc.clone(), *params)?, target);
    let sim = cfg.simulation.sim(sc.duration, Some(sc.terrain));
    let log = run_closed_loop(&mut controller, target.state(), Pose::default(), &sim, params)?;

    let fold = |f: fn(&crate::simulation::LogSample) -> f64| {
        log.samples.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let psi = fold(|s| s.state.psi_dot);
    let worst = ((psi.0 - target.psi_dot).abs()).max((psi.1 - target.psi_dot).abs()) / target.psi_dot.abs();
    let summary = FrictionSummary {
        target,
        seed: sc.terrain.seed,
        yaw_band: sc.yaw_band,
        psi_dot_range: psi,
        worst_yaw_deviation: worst,
        mu_range: fold(|s| s.mu),
        duration: sc.duration,
        simulated: log.last().map_or(0.0, |s| s.t),
        termination: log.termination.describe(),
        completed: log.termination.is_completed(),
        stats: SolveStats::of(&log),
    };
    Ok((log, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_fit_recovers_a_known_circle() {
        let pts: Vec<(f64, f64)> =
            (0..50).map(|k| k as f64 * 0.1).map(|a| (1.0 + 2.5 * a.cos(), -3.0 + 2.5 * a.sin())).collect();
        let c = fit_circle(&pts).unwrap();
        assert!((c.radius - 2.5).abs() < 1e-9);
        assert!((c.center[0] - 1.0).abs() < 1e-9 && (c.center[1] + 3.0).abs() < 1e-9);
        assert!(fit_circle(&pts[..2]).is_none());
    }

    #[test]
    fn config_sections_default_and_reject_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("[friction]\nduration = 3.0\n[friction.terrain]\nblock_size = 1.0\nmu_min = 0.2\nmu_max = 0.4\nseed = 9\n").unwrap();
        assert_eq!(cfg.friction.duration, 3.0);
        assert_eq!(cfg.friction.terrain.seed, 9);
        assert_eq!(cfg.steady, SteadyScenario::default());
        assert!(ExperimentConfig::from_toml("[steady]\nroll = 3.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[transition]\nreference_method = \"exact\"\n").is_err());
        let text = ExperimentConfig::default().to_config_string();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn ablation_reach_counts() {
        let a = AblationSummary { t: 2.0, warm: vec![1.1, 1.0, 1.0], cold: vec![2.0, 1.2, 1.0], tolerance: 1e-8 };
        assert_eq!(a.warm_iterations(), Some(1));
        assert_eq!(a.cold_iterations(), Some(2));
    }
}
