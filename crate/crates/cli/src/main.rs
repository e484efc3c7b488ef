//! `sttw-drift`: equilibrium solving, sweeps and closed-loop drifting experiments.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use sttw_drift::equilibrium::{
    compare, overall, residual, solve_adesa, solve_numeric, sweep, AdesaOptions, ComparisonRow, EquilibriumError,
    EquilibriumSpec, Method, SweepMethod, SweepRow, SweepTable, Var,
};
use sttw_drift::experiments::{run_friction, run_steady, run_transition, ExperimentConfig, ExperimentError};
use sttw_drift::params::load_params_file;
use sttw_drift::RobotParams;

/// Environment variable that replaces the default terrain seed.
const SEED_ENV: &str = "STTW_SEED";

const EXIT_PARSE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;
const EXIT_TERMINATED: u8 = 5;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "sttw-drift", version, about = "Steady-state drifting of single-track two-wheeled robots")]
struct Cli {
    /// Robot parameter file (TOML). Defaults to the reference robot.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one equilibrium with two variables fixed.
    EqSolve {
        /// `name=value`, e.g. `delta=-15deg` or `psi_dot=1.5`. Give exactly two.
        #[arg(long = "fix", required = true, allow_hyphen_values = true)]
        fix: Vec<String>,
        #[arg(long, default_value = "numeric")]
        method: Method,
        /// Write the solution as a one-row sweep CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve a grid of steering angles and yaw rates.
    EqSweep {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, value_enum, default_value = "both")]
        method: GridMethod,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Sweep with both solvers and tabulate their discrepancy and timing.
    EqCompare {
        #[command(flatten)]
        grid: Grid,
        #[arg(long, value_enum, default_value = "both")]
        method: GridMethod,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Run a closed-loop experiment and log it.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Grid {
    /// Steering angles, comma separated, with optional deg/rad suffix.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-5deg,-10deg,-15deg")]
    delta: Vec<String>,
    #[arg(long, default_value_t = 0.6)]
    psi_dot_min: f64,
    #[arg(long, default_value_t = 2.0)]
    psi_dot_max: f64,
    #[arg(long, default_value_t = 20)]
    points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridMethod {
    Numeric,
    Adesa,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Steady,
    Transition,
    Friction,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    scenario: Scenario,
    /// Experiment configuration (TOML); missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Terrain seed for the friction scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time [s], replacing the scenario's own.
    #[arg(long)]
    duration: Option<f64>,
    /// Trajectory log CSV. Defaults to `<scenario>.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-update controller diagnostics CSV.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Planned reference CSV (transition only).
    #[arg(long)]
    reference: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn parse(message: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, message: message.into() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { code: EXIT_IO, message: e.to_string() }
    }
}

impl From<EquilibriumError> for Failure {
    fn from(e: EquilibriumError) -> Self {
        let code = match &e {
            _ if e.is_infeasible() => EXIT_INFEASIBLE,
            EquilibriumError::NonConvergence { .. } | EquilibriumError::SingularJacobian { .. } => EXIT_NO_CONVERGENCE,
            _ => EXIT_PARSE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Equilibrium(e) => e.into(),
            ExperimentError::Mpc(sttw_drift::mpc::MpcError::Reference(e)) => e.into(),
            other => Self::parse(other.to_string()),
        }
    }
}

/// `value[deg|rad]`; bare numbers are radians for angles and SI otherwise.
fn parse_value(text: &str, angle: bool) -> Result<f64, Failure> {
    let text = text.trim();
    let (number, scale) = if let Some(v) = text.strip_suffix("deg") {
        (v, Some(std::f64::consts::PI / 180.0))
    } else if let Some(v) = text.strip_suffix("rad") {
        (v, Some(1.0))
    } else {
        (text, None)
    };
    if scale.is_some() && !angle {
        return Err(Failure::parse(format!("`{text}`: deg/rad suffixes apply to angles only")));
    }
    let v: f64 = number.trim().parse().map_err(|_| Failure::parse(format!("`{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(Failure::parse(format!("`{text}` is not finite")));
    }
    Ok(v * scale.unwrap_or(1.0))
}

fn parse_fix(text: &str) -> Result<(Var, f64), Failure> {
    let (name, value) = text.split_once('=').ok_or_else(|| Failure::parse(format!("`{text}`: expected name=value")))?;
    let var: Var = name.trim().parse().map_err(|e: String| Failure::parse(e))?;
    Ok((var, parse_value(value, var.is_angle())?))
}

fn load(params: &Option<PathBuf>) -> Result<RobotParams, Failure> {
    match params {
        Some(path) => load_params_file(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display()))),
        None => Ok(RobotParams::table1()),
    }
}

fn provenance(params: &RobotParams, sections: &[(&str, String)]) -> Vec<String> {
    let mut out = vec![format!("sttw-drift {}", env!("CARGO_PKG_VERSION")), "[params]".into(), params.to_config_string()];
    for (name, body) in sections {
        out.push(format!("[{name}]"));
        out.push(body.clone());
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) })
}

fn eq_solve(fix: &[String], method: Method, output: &Option<PathBuf>, params: &RobotParams) -> Result<(), Failure> {
    if fix.len() != 2 {
        return Err(Failure::parse(format!("expected two --fix values, got {}", fix.len())));
    }
    let a = parse_fix(&fix[0])?;
    let b = parse_fix(&fix[1])?;
    let spec = EquilibriumSpec::new(a, b)?;
    let start = Instant::now();
    let point = match method {
        Method::Numeric => solve_numeric(&spec, params)?,
        Method::Adesa => {
            let get = |v: Var| [a, b].iter().find(|(w, _)| *w == v).map(|(_, x)| *x);
            let (Some(delta), Some(psi_dot)) = (get(Var::Delta), get(Var::PsiDot)) else {
                return Err(Failure::parse("the geometric solver needs delta and psi_dot fixed"));
            };
            solve_adesa(delta, psi_dot, params, &AdesaOptions::default())?
        }
    };
    let wall_ns = start.elapsed().as_nanos() as f64;
    let x = point.xi;
    let g = point.geometry;
    let residual_norm = residual(&x, params)?.norm();
    println!("method      {method}");
    println!("delta       {:.10} rad ({:.4} deg)", x.delta, x.delta.to_degrees());
    println!("phi         {:.10} rad ({:.4} deg)", x.phi, x.phi.to_degrees());
    println!("psi_dot     {:.10} rad/s", x.psi_dot);
    println!("omega_f     {:.10} rad/s", x.omega_f);
    println!("omega_r     {:.10} rad/s", x.omega_r);
    println!("delta_r     {:.10} rad ({:.4} deg)", g.sideslip, g.sideslip.to_degrees());
    println!("delta_f     {:.10} rad", g.delta_f);
    println!("R_r         {:.4} m", g.rear_radius);
    println!("v_r         {:.6} m/s", g.rear_speed);
    println!("model residual {residual_norm:.3e}");
    println!("convergence {:.3e} ({})", point.residual_norm, match method {
        Method::Numeric => "acceleration norm",
        Method::Adesa => "steering mismatch [rad]",
    });
    println!("iterations  {}", point.iterations);
    println!("wall time   {:.1} us", wall_ns / 1e3);
    println!("drifting    {}", point.drifting);
    println!("counter-steering {}", x.is_counter_steering());
    if let Some(path) = output {
        let row = SweepRow {
            method,
            delta: x.delta,
            psi_dot: x.psi_dot,
            point: Some(point),
            failure: None,
            residual: residual_norm,
            wall_time_ns: wall_ns,
        };
        let spec_text = format!("{} = {}\n{} = {}", a.0, a.1, b.0, b.1);
        let mut out = create(path)?;
        SweepTable { rows: vec![row] }.write_csv(&mut out, &provenance(params, &[("fixed", spec_text)]))?;
        out.flush()?;
    }
    Ok(())
}

fn run_grid(grid: &Grid, method: SweepMethod, params: &RobotParams) -> Result<(SweepTable, Vec<String>), Failure> {
    let deltas = grid
        .delta
        .iter()
        .filter(|d| !d.trim().is_empty())
        .map(|d| parse_value(d, true))
        .collect::<Result<Vec<f64>, Failure>>()?;
    let table = sweep(&deltas, (grid.psi_dot_min, grid.psi_dot_max), grid.points, method, params)?;
    let deltas_text: Vec<String> = deltas.iter().map(|d| format!("{d:.10e}")).collect();
    let grid_text = format!(
        "delta = [{}]\npsi_dot = [{}, {}]\npoints = {}",
        deltas_text.join(", "),
        grid.psi_dot_min,
        grid.psi_dot_max,
        grid.points
    );
    Ok((table, provenance(params, &[("grid", grid_text)])))
}

fn write_sweeps(table: &SweepTable, dir: &Path, comments: &[String]) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    for m in [Method::Numeric, Method::Adesa] {
        let rows: Vec<SweepRow> = table.of(m).into_iter().cloned().collect();
        if rows.is_empty() {
            continue;
        }
        let feasible = rows.iter().filter(|r| r.feasible()).count();
        let path = dir.join(format!("sweep_{m}.csv"));
        println!("{m}: {feasible} / {} points feasible -> {}", rows.len(), path.display());
        let mut out = create(&path)?;
        SweepTable { rows }.write_csv(&mut out, comments)?;
        out.flush()?;
    }
    Ok(())
}

fn sweep_method(m: GridMethod) -> SweepMethod {
    match m {
        GridMethod::Numeric => SweepMethod::Numeric,
        GridMethod::Adesa => SweepMethod::Adesa,
        GridMethod::Both => SweepMethod::Both,
    }
}

fn eq_compare(grid: &Grid, dir: &Path, params: &RobotParams) -> Result<(), Failure> {
    let (table, comments) = run_grid(grid, SweepMethod::Both, params)?;
    write_sweeps(&table, dir, &comments)?;
    let mut rows = compare(&table.of(Method::Numeric), &table.of(Method::Adesa))?;
    let all = overall(&rows);
    println!("{:>10} {:>6} {:>8} {:>8} {:>8} {:>12} {:>12} {:>9}", "delta_deg", "points", "RAE_%", "RVE_%", "FVE_%", "numeric_us", "adesa_us", "speedup");
    for r in rows.iter().chain(std::iter::once(&all)) {
        let label = if r.delta.is_nan() { "all".to_string() } else { format!("{:.3}", r.delta.to_degrees()) };
        println!(
            "{label:>10} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>12.3} {:>12.3} {:>9.1}",
            r.points,
            r.rae,
            r.rve,
            r.fve,
            r.reference_mean_ns / 1e3,
            r.candidate_mean_ns / 1e3,
            r.speedup
        );
    }
    rows.push(all);
    let path = dir.join("compare.csv");
    let mut out = create(&path)?;
    ComparisonRow::write_csv(&rows, &mut out, &comments)?;
    out.flush()?;
    println!("statistics -> {}", path.display());
    Ok(())
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::parse(format!("{SEED_ENV}=`{v}` is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn simulate(args: &SimulateArgs, params: &RobotParams) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed_override(args.seed)? {
        cfg.friction.terrain.seed = seed;
    }
    if let Some(d) = args.duration {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Failure::parse(format!("duration must be non-negative, got {d}")));
        }
        match args.scenario {
            Scenario::Steady => cfg.steady.duration = d,
            Scenario::Transition => cfg.transition.schedule.duration = d,
            Scenario::Friction => cfg.friction.duration = d,
        }
    }
    let name = args.scenario.to_possible_value().unwrap().get_name().to_string();
    let comments = provenance(params, &[("scenario", name.clone()), ("config", cfg.to_config_string())]);

    let (log, lines, reference) = match args.scenario {
        Scenario::Steady => {
            let (log, s) = run_steady(&cfg, params)?;
            (log, s.lines(), None)
        }
        Scenario::Transition => {
            let (log, r, s) = run_transition(&cfg, params)?;
            (log, s.lines(), Some(r))
        }
        Scenario::Friction => {
            let (log, s) = run_friction(&cfg, params)?;
            (log, s.lines(), None)
        }
    };
    for line in &lines {
        println!("{line}");
    }
    let output = args.output.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.csv")));
    let mut out = create(&output)?;
    log.write_csv(&mut out, &comments)?;
    out.flush()?;
    println!("log -> {}", output.display());
    if let Some(path) = &args.controls {
        let mut out = create(path)?;
        for c in &comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        log.write_controls_csv(&mut out)?;
        out.flush()?;
        println!("controls -> {}", path.display());
    }
    if let Some(path) = &args.reference {
        let Some(r) = reference else {
            return Err(Failure::parse("--reference applies to the transition scenario only"));
        };
        let mut out = create(path)?;
        r.write_csv(&mut out, &comments)?;
        out.flush()?;
        println!("reference -> {}", path.display());
    }
    if !log.termination.is_completed() {
        return Err(Failure { code: EXIT_TERMINATED, message: log.termination.describe() });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let params = load(&cli.params)?;
    match &cli.command {
        Command::EqSolve { fix, method, output } => eq_solve(fix, *method, output, &params),
        Command::EqSweep { grid, method, output_dir } => {
            let (table, comments) = run_grid(grid, sweep_method(*method), &params)?;
            write_sweeps(&table, output_dir, &comments)
        }
        Command::EqCompare { grid, method, output_dir } => match method {
            GridMethod::Both => eq_compare(grid, output_dir, &params),
            _ => Err(Failure::parse("eq-compare needs --method both")),
        },
        Command::Simulate(args) => simulate(args, &params),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
