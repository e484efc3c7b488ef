//! Equilibrium sweeps over steering angle and yaw rate, and the comparison
//! of two sweeps on the same grid.

use super::{
    residual, solve_adesa, solve_numeric_with, AdesaOptions, Equilibrium, EquilibriumError,
    EquilibriumPoint, EquilibriumSpec, Method, NewtonOptions,
};
use crate::params::RobotParams;
use std::hint::black_box;
use std::io::{self, Write};
use std::time::Instant;

pub const SWEEP_HEADER: [&str; 13] = [
    "method", "delta", "psi_dot", "phi", "omega_f", "omega_r", "delta_r", "delta_f", "R_r",
    "residual", "iterations", "wall_time_ns", "feasible",
];

pub const COMPARISON_HEADER: [&str; 8] = [
    "delta", "points", "rae_pct", "rve_pct", "fve_pct", "numeric_mean_ns", "adesa_mean_ns", "speedup",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    Numeric,
    Adesa,
    Both,
}

impl SweepMethod {
    fn includes(self, m: Method) -> bool {
        matches!(
            (self, m),
            (SweepMethod::Both, _) | (SweepMethod::Numeric, Method::Numeric) | (SweepMethod::Adesa, Method::Adesa)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub newton: NewtonOptions,
    pub adesa: AdesaOptions,
    /// Each solve is repeated this many times and the mean wall time kept.
    pub timing_repeats: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { newton: NewtonOptions::default(), adesa: AdesaOptions::default(), timing_repeats: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    /// Requested steering angle [rad].
    pub delta: f64,
    /// Requested yaw rate [rad/s].
    pub psi_dot: f64,
    pub point: Option<EquilibriumPoint>,
    pub failure: Option<String>,
    /// Full-model acceleration norm at the returned point.
    pub residual: f64,
    /// Mean wall time of one solve [ns].
    pub wall_time_ns: f64,
}

impl SweepRow {
    pub fn feasible(&self) -> bool {
        self.point.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn of(&self, method: Method) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    /// Writes `# ` comment lines, then the CSV. `delta` and `psi_dot` are the
    /// requested grid values. Angles in radians; NaN for infeasible rows.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> io::Result<()> {
        write_comments(&mut out, comments)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_HEADER)?;
        for row in &self.rows {
            let (xi, geo, iters) = match &row.point {
                Some(p) => (p.xi, Some(p.geometry), p.iterations.to_string()),
                None => (
                    Equilibrium { delta: row.delta, psi_dot: row.psi_dot, phi: f64::NAN, omega_f: f64::NAN, omega_r: f64::NAN },
                    None,
                    String::new(),
                ),
            };
            let g = |f: fn(&super::Geometry) -> f64| geo.as_ref().map_or(f64::NAN, f);
            w.write_record([
                row.method.name().to_string(),
                fmt(row.delta),
                fmt(row.psi_dot),
                fmt(xi.phi),
                fmt(xi.omega_f),
                fmt(xi.omega_r),
                fmt(g(|g| g.sideslip)),
                fmt(g(|g| g.delta_f)),
                fmt(g(|g| g.rear_radius)),
                fmt(row.residual),
                iters,
                format!("{:.0}", row.wall_time_ns),
                row.feasible().to_string(),
            ])?;
        }
        w.flush()
    }
}

pub(crate) fn write_comments<W: Write>(out: &mut W, comments: &[String]) -> io::Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.10e}")
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn timed<T>(repeats: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let repeats = repeats.max(1);
    let start = Instant::now();
    for _ in 1..repeats {
        black_box(f());
    }
    let out = f();
    (out, start.elapsed().as_nanos() as f64 / repeats as f64)
}

pub fn sweep(
    deltas: &[f64],
    psi_dot_range: (f64, f64),
    points: usize,
    method: SweepMethod,
    params: &RobotParams,
) -> Result<SweepTable, EquilibriumError> {
    sweep_with(deltas, psi_dot_range, points, method, params, &SweepOptions::default())
}

/// Solves every `(delta, psi_dot)` on the grid. Yaw rates are visited in
/// increasing magnitude; each Newton solve starts from the geometric point,
/// or from the previous Newton solution where the geometric one does not
/// exist. Failures are recorded per point.
pub fn sweep_with(
    deltas: &[f64],
    psi_dot_range: (f64, f64),
    points: usize,
    method: SweepMethod,
    params: &RobotParams,
    options: &SweepOptions,
) -> Result<SweepTable, EquilibriumError> {
    if deltas.is_empty() {
        return Err(EquilibriumError::InvalidSpec("sweep needs at least one steering angle".into()));
    }
    if points < 2 {
        return Err(EquilibriumError::InvalidSpec("sweep needs at least two yaw-rate points".into()));
    }
    let (lo, hi) = psi_dot_range;
    if !lo.is_finite() || !hi.is_finite() || deltas.iter().any(|d| !d.is_finite()) {
        return Err(EquilibriumError::InvalidSpec("non-finite sweep bounds".into()));
    }
    let mut rates = linspace(lo, hi, points);
    rates.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mut table = SweepTable::default();
    for &delta in deltas {
        let mut previous: Option<Equilibrium> = None;
        for &psi_dot in &rates {
            let (adesa, adesa_ns) = timed(options.timing_repeats, || {
                solve_adesa(black_box(delta), black_box(psi_dot), params, &options.adesa)
            });
            if method.includes(Method::Adesa) {
                table.rows.push(row(Method::Adesa, delta, psi_dot, adesa.clone(), adesa_ns, params));
            }
            if method.includes(Method::Numeric) {
                let mut spec = EquilibriumSpec::steering_and_yaw_rate(delta, psi_dot)?;
                spec.guess = adesa.as_ref().ok().map(|p| p.xi).or(previous);
                let (numeric, ns) = timed(options.timing_repeats, || {
                    solve_numeric_with(black_box(&spec), params, &options.newton)
                });
                if let Ok(p) = &numeric {
                    previous = Some(p.xi);
                }
                table.rows.push(row(Method::Numeric, delta, psi_dot, numeric, ns, params));
            }
        }
    }
    Ok(table)
}

fn row(
    method: Method,
    delta: f64,
    psi_dot: f64,
    result: Result<EquilibriumPoint, EquilibriumError>,
    wall_time_ns: f64,
    params: &RobotParams,
) -> SweepRow {
    match result {
        Ok(p) => SweepRow {
            method,
            delta,
            psi_dot,
            residual: residual(&p.xi, params).map_or(f64::NAN, |r| r.norm()),
            point: Some(p),
            failure: None,
            wall_time_ns,
        },
        Err(e) => SweepRow {
            method,
            delta,
            psi_dot,
            point: None,
            failure: Some(e.to_string()),
            residual: f64::NAN,
            wall_time_ns,
        },
    }
}

/// Mean relative errors of a candidate sweep against a reference sweep for
/// one steering angle, over the points where both are feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub delta: f64,
    pub points: usize,
    /// Roll angle error [%].
    pub rae: f64,
    /// Rear wheel velocity error [%].
    pub rve: f64,
    /// Front wheel velocity error [%].
    pub fve: f64,
    pub reference_mean_ns: f64,
    pub candidate_mean_ns: f64,
    /// `reference_mean_ns / candidate_mean_ns`.
    pub speedup: f64,
}

impl ComparisonRow {
    pub fn write_csv<W: Write>(rows: &[ComparisonRow], mut out: W, comments: &[String]) -> io::Result<()> {
        write_comments(&mut out, comments)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COMPARISON_HEADER)?;
        for r in rows {
            w.write_record([
                fmt(r.delta),
                r.points.to_string(),
                fmt(r.rae),
                fmt(r.rve),
                fmt(r.fve),
                format!("{:.1}", r.reference_mean_ns),
                format!("{:.1}", r.candidate_mean_ns),
                fmt(r.speedup),
            ])?;
        }
        w.flush()
    }
}

fn rel_pct(candidate: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if candidate == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        100.0 * ((candidate - reference) / reference).abs()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
}

/// Per-steering-angle comparison of `candidate` against `reference`. The rows
/// must cover the same `(delta, psi_dot)` grid in the same order.
pub fn compare(reference: &[&SweepRow], candidate: &[&SweepRow]) -> Result<Vec<ComparisonRow>, EquilibriumError> {
    if reference.len() != candidate.len() {
        return Err(EquilibriumError::GridMismatch(format!(
            "{} reference points vs {} candidate points",
            reference.len(),
            candidate.len()
        )));
    }
    for (r, c) in reference.iter().zip(candidate) {
        if r.delta != c.delta || r.psi_dot != c.psi_dot {
            return Err(EquilibriumError::GridMismatch(format!(
                "({}, {}) vs ({}, {})",
                r.delta, r.psi_dot, c.delta, c.psi_dot
            )));
        }
    }
    let mut deltas: Vec<f64> = Vec::new();
    for r in reference {
        if !deltas.contains(&r.delta) {
            deltas.push(r.delta);
        }
    }
    Ok(deltas
        .into_iter()
        .map(|delta| {
            let pairs: Vec<_> = reference
                .iter()
                .zip(candidate)
                .filter(|(r, _)| r.delta == delta)
                .collect();
            let both: Vec<_> = pairs
                .iter()
                .filter_map(|(r, c)| Some((r.point.as_ref()?, c.point.as_ref()?)))
                .collect();
            let err = |f: fn(&Equilibrium) -> f64| {
                mean(&both.iter().map(|(r, c)| rel_pct(f(&c.xi), f(&r.xi))).collect::<Vec<_>>())
            };
            let times = |rows: Vec<&SweepRow>| {
                mean(&rows.iter().filter(|r| r.feasible()).map(|r| r.wall_time_ns).collect::<Vec<_>>())
            };
            let reference_mean_ns = times(pairs.iter().map(|p| *p.0).collect());
            let candidate_mean_ns = times(pairs.iter().map(|p| *p.1).collect());
            ComparisonRow {
                delta,
                points: both.len(),
                rae: err(|x| x.phi),
                rve: err(|x| x.omega_r),
                fve: err(|x| x.omega_f),
                reference_mean_ns,
                candidate_mean_ns,
                speedup: reference_mean_ns / candidate_mean_ns,
            }
        })
        .collect())
}

/// Point-weighted aggregate of per-angle comparison rows.
pub fn overall(rows: &[ComparisonRow]) -> ComparisonRow {
    let n: usize = rows.iter().map(|r| r.points).sum();
    let w = |f: fn(&ComparisonRow) -> f64| {
        rows.iter().filter(|r| r.points > 0).map(|r| f(r) * r.points as f64).sum::<f64>() / n as f64
    };
    let reference_mean_ns = w(|r| r.reference_mean_ns);
    let candidate_mean_ns = w(|r| r.candidate_mean_ns);
    ComparisonRow {
        delta: f64::NAN,
        points: n,
        rae: w(|r| r.rae),
        rve: w(|r| r.rve),
        fve: w(|r| r.fve),
        reference_mean_ns,
        candidate_mean_ns,
        speedup: reference_mean_ns / candidate_mean_ns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepTable {
        let deltas = [(-15f64).to_radians(), (-10f64).to_radians()];
        let opts = SweepOptions { timing_repeats: 1, ..SweepOptions::default() };
        sweep_with(&deltas, (0.6, 2.0), 5, SweepMethod::Both, &RobotParams::table1(), &opts).unwrap()
    }

    #[test]
    fn grid_validation() {
        let p = RobotParams::table1();
        assert!(sweep(&[], (0.6, 2.0), 5, SweepMethod::Adesa, &p).is_err());
        assert!(sweep(&[-0.2], (0.6, 2.0), 1, SweepMethod::Adesa, &p).is_err());
    }

    #[test]
    fn both_methods_cover_the_grid() {
        let t = small();
        assert_eq!(t.of(Method::Numeric).len(), 10);
        assert_eq!(t.of(Method::Adesa).len(), 10);
        for r in &t.rows {
            assert!(r.feasible(), "{r:?}");
            if r.method == Method::Numeric {
                assert!(r.residual <= 1e-8);
            }
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let t = small();
        let n = t.of(Method::Numeric);
        let rows = compare(&n, &n).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!((r.rae, r.rve, r.fve), (0.0, 0.0, 0.0));
            assert_eq!(r.points, 5);
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let t = small();
        let n = t.of(Method::Numeric);
        let a = t.of(Method::Adesa);
        assert!(matches!(compare(&n[..4], &a), Err(EquilibriumError::GridMismatch(_))));
        let mut shifted: Vec<SweepRow> = a.iter().map(|r| (*r).clone()).collect();
        shifted[0].psi_dot += 0.1;
        let shifted: Vec<&SweepRow> = shifted.iter().collect();
        assert!(matches!(compare(&n, &shifted), Err(EquilibriumError::GridMismatch(_))));
    }

    #[test]
    fn csv_marks_infeasible_rows() {
        let p = RobotParams::table1();
        let opts = SweepOptions { timing_repeats: 1, ..SweepOptions::default() };
        let t = sweep_with(&[(-15f64).to_radians()], (0.0, 6.0), 2, SweepMethod::Adesa, &p, &opts).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &["config".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# config"));
        assert_eq!(lines.next().unwrap(), SWEEP_HEADER.join(","));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.ends_with(",false") && r.contains("NaN")));
    }
}
