//! Iterative LQR over the receding horizon, with warm-start memory.

use super::{jacobians, rk4_map, Matrix2x5, Matrix5, Matrix5x2, MpcConfig, MpcError, ReferenceTrajectory, JACOBIAN_STEP};
use crate::dynamics::{check_envelope, ControlInput, Pose, State};
use crate::equilibrium::Equilibrium;
use crate::params::RobotParams;
use crate::simulation::{ControlOutput, Controller};
use nalgebra::{Matrix2, Vector2, Vector5};

type X = Vector5<f64>;
type U = Vector2<f64>;

/// Where the nominal trajectory of a solve comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// The previous solution shifted to the current time.
    Previous,
    /// The reference itself, closed with its LQR tracking policy.
    Reference,
    /// The current state held over the horizon with the reference inputs.
    Cold,
}

/// Objective after each iteration at one penalty weight. Entry 0 is the
/// objective of the initial rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub penalty_weight: f64,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// First input, clamped to the input bounds.
    pub input: ControlInput,
    pub unclamped: ControlInput,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    pub init: InitMode,
    pub phases: Vec<PhaseRecord>,
    pub states: Vec<X>,
    pub inputs: Vec<U>,
}

impl MpcSolution {
    /// Set when the iteration budget ran out before convergence.
    pub fn degraded(&self) -> bool {
        !self.converged
    }

    pub fn control_output(&self) -> ControlOutput {
        ControlOutput {
            input: self.input,
            iterations: self.iterations,
            objective: self.objective,
            degraded: self.degraded(),
        }
    }
}

#[derive(Debug, Clone)]
struct Memory {
    t: f64,
    xs: Vec<X>,
    us: Vec<U>,
    gains: Vec<Matrix2x5>,
}

struct Targets {
    xr: Vec<X>,
    ur: Vec<U>,
}

struct Policy {
    gains: Vec<Matrix2x5>,
    ff: Vec<U>,
    dv1: f64,
    dv2: f64,
}

impl Policy {
    fn expected(&self, alpha: f64) -> f64 {
        alpha * self.dv1 + 0.5 * alpha * alpha * self.dv2
    }
}

/// Stateful receding-horizon solver. Each solve starts from the previous
/// solution when one exists, else from the mode set by [`MpcSolver::with_first_init`].
#[derive(Debug, Clone)]
pub struct MpcSolver {
    config: MpcConfig,
    params: RobotParams,
    first_init: InitMode,
    memory: Option<Memory>,
}

impl MpcSolver {
    pub fn new(config: MpcConfig, params: RobotParams) -> Result<Self, MpcError> {
        config.validate()?;
        Ok(Self { config, params, first_init: InitMode::Reference, memory: None })
    }

    pub fn with_first_init(mut self, mode: InitMode) -> Self {
        self.first_init = mode;
        self
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn params(&self) -> &RobotParams {
        &self.params
    }

    /// Replaces the prediction model parameters, keeping the warm start.
    pub fn set_params(&mut self, params: RobotParams) {
        self.params = params;
    }

    /// Forgets the previous solution.
    pub fn reset(&mut self) {
        self.memory = None;
    }

    /// Holds the drift `target` with inputs `(0, omega_r)`.
    pub fn solve_steady(&mut self, t: f64, x_now: &State, target: &Equilibrium) -> Result<MpcSolution, MpcError> {
        let n = self.config.horizon;
        let x = target.state().to_vector();
        let u = ControlInput { delta_dot: 0.0, omega_r: target.omega_r }.to_vector();
        self.solve(t, x_now, Targets { xr: vec![x; n + 1], ur: vec![u; n] })
    }

    /// Follows `reference` sampled at `t + k dt`; the terminal term targets
    /// the reference at the end of the horizon.
    pub fn solve_tracking(
        &mut self,
        t: f64,
        x_now: &State,
        reference: &ReferenceTrajectory,
    ) -> Result<MpcSolution, MpcError> {
        let n = self.config.horizon;
        let mut xr = Vec::with_capacity(n + 1);
        let mut ur = Vec::with_capacity(n);
        for k in 0..=n {
            let (x, u) = reference.at(t + k as f64 * self.config.dt);
            xr.push(x);
            if k < n {
                ur.push(u);
            }
        }
        self.solve(t, x_now, Targets { xr, ur })
    }

    fn solve(&mut self, t: f64, x_now: &State, targets: Targets) -> Result<MpcSolution, MpcError> {
        let x0 = x_now.to_vector();
        check_envelope(x_now, &ControlInput::from_vector(&targets.ur[0])).map_err(MpcError::Envelope)?;
        let cfg = &self.config;
        let mut weight = cfg.penalty_weight;
        let mut iterations = 0;

        let (init, mut xs, mut us, mut gains) = self.initialize(t, &x0, &targets, weight, &mut iterations)?;
        let mut j = self.cost(&xs, &us, &targets, weight);
        let mut phases = vec![PhaseRecord { penalty_weight: weight, objectives: vec![j] }];
        let mut converged = false;
        let mut doublings = 0;
        let mut reg = 0.0;

        while iterations < cfg.max_sqp_iters {
            iterations += 1;
            let Some(lin) = self.linearize(&xs, &us) else { break };
            let Some(policy) = self.backward(&xs, &us, &lin, None, &targets, weight, reg) else {
                reg = next_reg(reg);
                phases.last_mut().unwrap().objectives.push(j);
                if reg > 1e6 {
                    break;
                }
                continue;
            };
            gains.clone_from(&policy.gains);
            if -policy.expected(1.0) <= cfg.tol * (1.0 + j) {
                converged = true;
            } else {
                let mut accepted = None;
                let mut alpha = 1.0;
                while alpha >= 1.0 / 1024.0 {
                    if let Some((xn, un)) = self.rollout(&x0, &xs, &us, &policy.gains, Some(&policy.ff), alpha) {
                        let jn = self.cost(&xn, &un, &targets, weight);
                        if jn - j <= 1e-4 * policy.expected(alpha) {
                            accepted = Some((xn, un, jn));
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                match accepted {
                    Some((xn, un, jn)) => {
                        converged = j - jn <= cfg.tol * (1.0 + j);
                        xs = xn;
                        us = un;
                        j = jn;
                        reg = (reg * 0.1).max(0.0);
                        if reg < 1e-8 {
                            reg = 0.0;
                        }
                    }
                    None => {
                        reg = next_reg(reg);
                        if reg > 1e6 {
                            phases.last_mut().unwrap().objectives.push(j);
                            break;
                        }
                    }
                }
            }
            phases.last_mut().unwrap().objectives.push(j);

            if converged {
                if doublings < cfg.max_penalty_doublings && self.violates(&xs, &us) {
                    doublings += 1;
                    weight *= 2.0;
                    j = self.cost(&xs, &us, &targets, weight);
                    phases.push(PhaseRecord { penalty_weight: weight, objectives: vec![j] });
                    converged = false;
                    reg = 0.0;
                    continue;
                }
                break;
            }
        }

        let unclamped = ControlInput::from_vector(&us[0]);
        let input = ControlInput::from_vector(&cfg.clamp_input(&us[0]));
        self.memory = Some(Memory { t, xs: xs.clone(), us: us.clone(), gains });
        Ok(MpcSolution { input, unclamped, iterations, objective: j, converged, init, phases, states: xs, inputs: us })
    }

    #[allow(clippy::type_complexity)]
    fn initialize(
        &self,
        t: f64,
        x0: &X,
        targets: &Targets,
        weight: f64,
        iterations: &mut usize,
    ) -> Result<(InitMode, Vec<X>, Vec<U>, Vec<Matrix2x5>), MpcError> {
        let n = self.config.horizon;
        let mut candidates = Vec::with_capacity(3);
        if let Some(mem) = &self.memory {
            let shift = ((t - mem.t) / self.config.dt).max(0.0);
            let xs = (0..=n).map(|k| lerp_at(&mem.xs, k as f64 + shift)).collect::<Vec<_>>();
            let us = (0..n).map(|k| lerp_at(&mem.us, k as f64 + shift)).collect::<Vec<_>>();
            let gains = (0..n).map(|k| lerp_at(&mem.gains, k as f64 + shift)).collect::<Vec<_>>();
            if let Some((xr, ur)) = self.rollout(x0, &xs, &us, &gains, None, 0.0) {
                return Ok((InitMode::Previous, xr, ur, gains));
            }
            candidates.push((InitMode::Previous, xs, us));
        }
        if self.first_init != InitMode::Cold {
            candidates.push((InitMode::Reference, targets.xr.clone(), targets.ur.clone()));
        }
        candidates.push((InitMode::Cold, vec![*x0; n + 1], targets.ur.clone()));

        // One LQR pass about each candidate nominal, accounting for its
        // dynamic defects, closed from the current state. Heavier
        // regularization gives softer feedback when the first policy leaves
        // the model envelope.
        for (mode, xs, us) in candidates {
            *iterations += 1;
            let Some(lin) = self.linearize(&xs, &us) else { continue };
            let Some(defects) = self.defects(&xs, &us) else { continue };
            for reg in INIT_REGULARIZATION {
                let Some(policy) = self.backward(&xs, &us, &lin, Some(&defects), targets, weight, reg) else {
                    continue;
                };
                if let Some((xr, ur)) = self.rollout(x0, &xs, &us, &policy.gains, Some(&policy.ff), 1.0) {
                    return Ok((mode, xr, ur, policy.gains));
                }
            }
            let open = vec![Matrix2x5::zeros(); n];
            if let Some((xr, ur)) = self.rollout(x0, &xs, &us, &open, None, 0.0) {
                return Ok((mode, xr, ur, open));
            }
        }
        Err(MpcError::Rollout)
    }

    fn rollout(
        &self,
        x0: &X,
        xs: &[X],
        us: &[U],
        gains: &[Matrix2x5],
        ff: Option<&[U]>,
        alpha: f64,
    ) -> Option<(Vec<X>, Vec<U>)> {
        let n = us.len();
        let mut xn = Vec::with_capacity(n + 1);
        let mut un = Vec::with_capacity(n);
        xn.push(*x0);
        for k in 0..n {
            let mut u = us[k] + gains[k] * (xn[k] - xs[k]);
            if let Some(ff) = ff {
                u += ff[k] * alpha;
            }
            let next = rk4_map(&xn[k], &self.config.clamp_input(&u), self.config.dt, &self.params).ok()?;
            if !next.iter().all(|v| v.is_finite()) {
                return None;
            }
            un.push(u);
            xn.push(next);
        }
        Some((xn, un))
    }

    /// `f(x_k, u_k) - x_{k+1}` along a nominal that need not be a rollout.
    fn defects(&self, xs: &[X], us: &[U]) -> Option<Vec<X>> {
        us.iter()
            .enumerate()
            .map(|(k, u)| {
                rk4_map(&xs[k], &self.config.clamp_input(u), self.config.dt, &self.params).ok().map(|f| f - xs[k + 1])
            })
            .collect()
    }

    /// Jacobians of the saturated map `x -> f(x, clamp(u))`. Input
    /// directions beyond a bound have no effect on the state.
    fn linearize(&self, xs: &[X], us: &[U]) -> Option<Vec<(Matrix5, Matrix5x2)>> {
        us.iter()
            .zip(xs)
            .map(|(u, x)| {
                let c = self.config.clamp_input(u);
                let (a, mut b) = jacobians(x, &c, self.config.dt, &self.params, JACOBIAN_STEP).ok()?;
                for i in 0..2 {
                    if c[i] != u[i] {
                        b.column_mut(i).fill(0.0);
                    }
                }
                Some((a, b))
            })
            .collect()
    }

    fn state_penalty(&self, x: &X) -> (X, X) {
        let mut excess = X::zeros();
        let mut active = X::zeros();
        for i in 0..5 {
            let c = x[i].clamp(self.config.x_min[i], self.config.x_max[i]);
            if c != x[i] {
                excess[i] = x[i] - c;
                active[i] = 1.0;
            }
        }
        (excess, active)
    }

    fn input_penalty(&self, u: &U) -> (U, U) {
        let c = self.config.clamp_input(u);
        let excess = u - c;
        (excess, excess.map(|e| if e != 0.0 { 1.0 } else { 0.0 }))
    }

    fn violates(&self, xs: &[X], us: &[U]) -> bool {
        let tol = 1e-6;
        xs[1..].iter().any(|x| self.state_penalty(x).0.amax() > tol)
            || us.iter().any(|u| self.input_penalty(u).0.amax() > tol)
    }

    /// Penalized objective of a trajectory.
    fn cost(&self, xs: &[X], us: &[U], targets: &Targets, weight: f64) -> f64 {
        let q = X::from(self.config.q);
        let qf = X::from(self.config.q_terminal);
        let r = U::from(self.config.r);
        let n = us.len();
        let mut j = 0.0;
        for k in 0..n {
            let dx = xs[k] - targets.xr[k];
            let du = us[k] - targets.ur[k];
            j += dx.component_mul(&dx).dot(&q) + du.component_mul(&du).dot(&r);
            j += weight * self.input_penalty(&us[k]).0.norm_squared();
            if k > 0 {
                j += weight * self.state_penalty(&xs[k]).0.norm_squared();
            }
        }
        let dx = xs[n] - targets.xr[n];
        j + dx.component_mul(&dx).dot(&qf) + weight * self.state_penalty(&xs[n]).0.norm_squared()
    }

    fn backward(
        &self,
        xs: &[X],
        us: &[U],
        lin: &[(Matrix5, Matrix5x2)],
        defects: Option<&[X]>,
        targets: &Targets,
        weight: f64,
        reg: f64,
    ) -> Option<Policy> {
        let q = X::from(self.config.q);
        let r = U::from(self.config.r);
        let n = us.len();

        let (ex, act) = self.state_penalty(&xs[n]);
        let qf = X::from(self.config.q_terminal);
        let mut vx = (qf.component_mul(&(xs[n] - targets.xr[n])) + ex * weight) * 2.0;
        let mut vxx = Matrix5::from_diagonal(&((qf + act * weight) * 2.0));

        let mut gains = vec![Matrix2x5::zeros(); n];
        let mut ff = vec![U::zeros(); n];
        let (mut dv1, mut dv2) = (0.0, 0.0);
        for k in (0..n).rev() {
            let (a, b) = &lin[k];
            let (ex, act) = if k > 0 { self.state_penalty(&xs[k]) } else { (X::zeros(), X::zeros()) };
            let (eu, actu) = self.input_penalty(&us[k]);
            let lx = (q.component_mul(&(xs[k] - targets.xr[k])) + ex * weight) * 2.0;
            let lu = (r.component_mul(&(us[k] - targets.ur[k])) + eu * weight) * 2.0;

            if let Some(d) = defects {
                vx += vxx * d[k];
            }
            let qx = lx + a.transpose() * vx;
            let qu = lu + b.transpose() * vx;
            let vxx_a = vxx * a;
            let qxx = Matrix5::from_diagonal(&((q + act * weight) * 2.0)) + a.transpose() * vxx_a;
            let quu = Matrix2::from_diagonal(&((r + actu * weight) * 2.0)) + b.transpose() * vxx * b;
            let qux = b.transpose() * vxx_a;

            let chol = (quu + Matrix2::identity() * reg).cholesky()?;
            let kff = -chol.solve(&qu);
            let gain = -chol.solve(&qux);
            if !kff.iter().chain(gain.iter()).all(|v| v.is_finite()) {
                return None;
            }
            dv1 += kff.dot(&qu);
            dv2 += kff.dot(&(quu * kff));
            vx = qx + gain.transpose() * (quu * kff) + gain.transpose() * qu + qux.transpose() * kff;
            vxx = qxx + gain.transpose() * quu * gain + gain.transpose() * qux + qux.transpose() * gain;
            vxx = (vxx + vxx.transpose()) * 0.5;
            gains[k] = gain;
            ff[k] = kff;
        }
        Some(Policy { gains, ff, dv1, dv2 })
    }
}

/// Input-Hessian shifts tried, in order, when an initial rollout fails.
const INIT_REGULARIZATION: [f64; 6] = [0.0, 1.0, 10.0, 1e2, 1e3, 1e4];

fn next_reg(reg: f64) -> f64 {
    if reg == 0.0 {
        1e-4
    } else {
        reg * 10.0
    }
}

fn lerp_at<T>(items: &[T], pos: f64) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let last = items.len() - 1;
    let pos = pos.min(last as f64);
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i >= last || f == 0.0 {
        items[i.min(last)]
    } else {
        items[i] * (1.0 - f) + items[i + 1] * f
    }
}

#[derive(Debug, Clone)]
enum Goal {
    Steady(Equilibrium),
    Tracking(ReferenceTrajectory),
}

/// Closes the loop around an [`MpcSolver`], holding a drift or following a
/// planned reference.
#[derive(Debug, Clone)]
pub struct MpcController {
    solver: MpcSolver,
    goal: Goal,
    last: Option<MpcSolution>,
}

impl MpcController {
    pub fn steady(solver: MpcSolver, target: Equilibrium) -> Self {
        Self { solver, goal: Goal::Steady(target), last: None }
    }

    pub fn tracking(solver: MpcSolver, reference: ReferenceTrajectory) -> Self {
        Self { solver, goal: Goal::Tracking(reference), last: None }
    }

    pub fn solver(&self) -> &MpcSolver {
        &self.solver
    }

    pub fn solver_mut(&mut self) -> &mut MpcSolver {
        &mut self.solver
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.last.as_ref()
    }

    /// Reference state and input at `t`.
    pub fn reference_at(&self, t: f64) -> (State, ControlInput) {
        match &self.goal {
            Goal::Steady(xi) => (xi.state(), ControlInput { delta_dot: 0.0, omega_r: xi.omega_r }),
            Goal::Tracking(r) => {
                let (x, u) = r.at(t);
                (State::from_vector(&x), ControlInput::from_vector(&u))
            }
        }
    }

    pub fn solve(&mut self, t: f64, state: &State) -> Result<&MpcSolution, MpcError> {
        let sol = match &self.goal {
            Goal::Steady(xi) => self.solver.solve_steady(t, state, xi)?,
            Goal::Tracking(r) => self.solver.solve_tracking(t, state, r)?,
        };
        Ok(self.last.insert(sol))
    }
}

impl Controller for MpcController {
    fn control(&mut self, t: f64, state: &State, _pose: &Pose) -> Result<ControlOutput, String> {
        self.solve(t, state).map(|s| s.control_output()).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_numeric, EquilibriumSpec};

    fn drift() -> Equilibrium {
        let spec = EquilibriumSpec::steering_and_yaw_rate((-15f64).to_radians(), 1.2).unwrap();
        solve_numeric(&spec, &RobotParams::table1()).unwrap().xi
    }

    fn solver() -> MpcSolver {
        MpcSolver::new(MpcConfig::default(), RobotParams::table1()).unwrap()
    }

    fn perturbed(xi: &Equilibrium) -> State {
        State { phi: xi.phi + 3f64.to_radians(), ..xi.state() }
    }

    #[test]
    fn equilibrium_returns_its_own_input() {
        let xi = drift();
        let sol = solver().solve_steady(0.0, &xi.state(), &xi).unwrap();
        assert!(sol.converged);
        assert!(sol.input.delta_dot.abs() <= 1e-6, "{:?}", sol.input);
        assert!((sol.input.omega_r - xi.omega_r).abs() <= 1e-6, "{:?}", sol.input);
        assert!(sol.objective < 1e-6);
    }

    #[test]
    fn objective_never_increases_within_a_phase() {
        let xi = drift();
        let mut s = solver();
        for init in [InitMode::Reference, InitMode::Cold] {
            s = s.with_first_init(init);
            s.reset();
            let sol = s.solve_steady(0.0, &perturbed(&xi), &xi).unwrap();
            for phase in &sol.phases {
                for w in phase.objectives.windows(2) {
                    assert!(w[1] <= w[0], "{:?}", phase.objectives);
                }
            }
        }
    }

    #[test]
    fn repeated_solves_are_identical() {
        let xi = drift();
        let x = perturbed(&xi);
        let a = solver().solve_steady(0.0, &x, &xi).unwrap();
        let b = solver().solve_steady(0.0, &x, &xi).unwrap();
        assert_eq!(a, b);
        let mut s = solver();
        let first = s.solve_steady(0.0, &x, &xi).unwrap().input;
        let again = s.solve_steady(0.0, &x, &xi).unwrap().input;
        assert!((first.to_vector() - again.to_vector()).norm() <= 1e-3);
    }

    #[test]
    fn inputs_are_clamped() {
        let xi = drift();
        let cfg = MpcConfig { u_min: [-1.0, -80.0], u_max: [1.0, 80.0], max_penalty_doublings: 0, ..MpcConfig::default() };
        let mut s = MpcSolver::new(cfg, RobotParams::table1()).unwrap();
        let x = State { delta: xi.delta + 0.03, ..perturbed(&xi) };
        let sol = s.solve_steady(0.0, &x, &xi).unwrap();
        assert!(sol.input.delta_dot.abs() <= 1.0);
        assert!(sol.unclamped.delta_dot.abs() > 1.0, "{:?}", sol.unclamped);
    }

    #[test]
    fn constant_reference_matches_steady() {
        let xi = drift();
        let x = perturbed(&xi);
        let steady = solver().solve_steady(0.0, &x, &xi).unwrap();
        let r = ReferenceTrajectory::constant(xi, 0.02);
        let tracking = solver().solve_tracking(0.0, &x, &r).unwrap();
        assert_eq!(steady, tracking);
    }

    #[test]
    fn state_outside_the_envelope_is_an_error() {
        let xi = drift();
        let x = State { phi: 1.6, ..xi.state() };
        assert!(matches!(solver().solve_steady(0.0, &x, &xi), Err(MpcError::Envelope(_))));
    }

    #[test]
    fn shifted_warm_start_is_used() {
        let xi = drift();
        let mut s = solver();
        let x = perturbed(&xi);
        let first = s.solve_steady(0.0, &x, &xi).unwrap();
        let next = State::from_vector(&first.states[0].lerp(&first.states[1], 0.5));
        let second = s.solve_steady(0.01, &next, &xi).unwrap();
        assert_eq!(second.init, InitMode::Previous);
        assert!(second.iterations <= first.iterations);
    }
}
