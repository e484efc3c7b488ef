use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sttw-drift")).args(args).env_remove("STTW_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn eq_solve_geometric_reports_the_friction_radius() {
    let o = cli(&["eq-solve", "--fix", "delta=-15deg", "--fix", "psi_dot=1.5", "--method", "adesa"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!((field(&stdout(&o), "R_r") - 1.3080).abs() < 5e-5);
    assert!(field(&stdout(&o), "convergence") <= 1e-6);
}

#[test]
fn eq_solve_numeric_writes_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("point.csv");
    let o = cli(&[
        "eq-solve", "--fix", "delta=-0.2617993878rad", "--fix", "psi_dot=1.5", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(field(&stdout(&o), "model residual") <= 1e-8);
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "method");
    assert_eq!(rows[1][0], "numeric");
    assert!(fs::read_to_string(&out).unwrap().starts_with("# sttw-drift "));
}

#[test]
fn exit_codes() {
    let o = cli(&["eq-solve", "--fix", "delta=-15deg", "--fix", "psi_dot=0", "--method", "adesa"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no drift equilibrium"));
    assert_eq!(cli(&["eq-solve", "--fix", "yaw=1", "--fix", "psi_dot=1"]).status.code(), Some(2));
    assert_eq!(cli(&["eq-solve", "--fix", "psi_dot=1deg", "--fix", "delta=0.1"]).status.code(), Some(2));
    assert_eq!(cli(&["eq-solve", "--fix", "phi=0.3", "--fix", "psi_dot=1", "--method", "adesa"]).status.code(), Some(2));
    assert_eq!(cli(&["eq-sweep", "--delta", "", "--output-dir", "unused"]).status.code(), Some(2));
    assert_eq!(cli(&["eq-sweep", "--points", "1", "--output-dir", "unused"]).status.code(), Some(2));
    assert_eq!(cli(&["--params", "missing.toml", "eq-solve", "--fix", "delta=0", "--fix", "psi_dot=0"]).status.code(), Some(2));
    assert_eq!(cli(&["simulate", "orbit"]).status.code(), Some(2));
}

#[test]
fn sweep_both_gives_aligned_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "eq-sweep", "--delta", "-10deg,-15deg", "--points", "6", "--method", "both", "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let numeric = data_rows(&dir.path().join("sweep_numeric.csv"));
    let adesa = data_rows(&dir.path().join("sweep_adesa.csv"));
    assert_eq!(numeric.len(), 13);
    assert_eq!(numeric[0], adesa[0]);
    for (n, a) in numeric.iter().zip(&adesa).skip(1) {
        assert_eq!(n[1..3], a[1..3]);
        assert_eq!(n[12], "true");
    }
}

#[test]
fn compare_writes_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["eq-compare", "--points", "8", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let rows = data_rows(&dir.path().join("compare.csv"));
    assert_eq!(rows[0][2..5], ["rae_pct", "rve_pct", "fve_pct"]);
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        for v in &r[2..5] {
            assert!(v.parse::<f64>().unwrap() <= 10.0, "{r:?}");
        }
    }
    assert_eq!(cli(&["eq-compare", "--method", "adesa", "--output-dir", "unused"]).status.code(), Some(2));
}

#[test]
fn friction_runs_are_byte_identical_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    for name in ["a.csv", "b.csv"] {
        let o = cli(&["simulate", "friction", "--seed", "7", "--duration", "0.5", "--output", &path(name)]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let a = fs::read(path("a.csv")).unwrap();
    assert_eq!(a, fs::read(path("b.csv")).unwrap());
    let text = String::from_utf8(a.clone()).unwrap();
    assert!(text.contains("# seed = 7"), "{}", &text[..2000.min(text.len())]);

    let from_env = Command::new(env!("CARGO_BIN_EXE_sttw-drift"))
        .args(["simulate", "friction", "--duration", "0.5", "--output", &path("env.csv")])
        .env("STTW_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(from_env.status.code(), Some(0));
    assert_eq!(a, fs::read(path("env.csv")).unwrap());

    cli(&["simulate", "friction", "--seed", "8", "--duration", "0.5", "--output", &path("c.csv")]);
    assert_ne!(a, fs::read(path("c.csv")).unwrap());
}

#[test]
fn steady_summary_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("steady.csv");
    let controls = dir.path().join("controls.csv");
    let o = cli(&[
        "simulate", "steady", "--params", concat!(env!("CARGO_MANIFEST_DIR"), "/../../params/table1.toml"),
        "--output", log.to_str().unwrap(), "--controls", controls.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("band check: PASS"), "{}", stdout(&o));
    let text = fs::read_to_string(&log).unwrap();
    for marker in ["# sttw-drift ", "# [params]", "# [config]", "# [mpc]", "# termination: completed"] {
        assert!(text.contains(marker), "missing {marker}");
    }
    assert_eq!(data_rows(&controls).len(), 1 + 1101);
}

#[test]
fn transition_reference_shows_the_ramps() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("reference.csv");
    let o = cli(&[
        "simulate", "transition", "--output", dir.path().join("log.csv").to_str().unwrap(), "--reference",
        reference.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("band check: PASS"), "{}", stdout(&o));
    let rows = data_rows(&reference);
    let at = |t: f64, col: usize| -> f64 {
        rows[1..].iter().find(|r| (r[0].parse::<f64>().unwrap() - t).abs() < 1e-9).unwrap()[col].parse().unwrap()
    };
    let (delta, psi_dot) = (1, 3);
    assert_eq!(at(0.0, delta), at(2.0, delta));
    assert!(at(4.5, delta) > at(2.0, delta) && at(7.0, delta) > at(4.5, delta));
    assert!((at(7.0, delta) - at(25.0, delta)).abs() < 1e-6);
    assert!((at(7.0, delta) - (-5f64).to_radians()).abs() < 1e-6);
    assert_eq!(at(0.0, psi_dot), at(2.0, psi_dot));
    assert!(at(11.0, psi_dot) < at(7.0, psi_dot) && at(20.0, psi_dot) < at(11.0, psi_dot));
    assert_eq!(at(20.0, psi_dot), at(25.0, psi_dot));
}
