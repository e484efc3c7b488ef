use sttw_drift::equilibrium::*;
use sttw_drift::RobotParams;

fn grid() -> SweepTable {
    let deltas: Vec<f64> = [-5f64, -10.0, -15.0, -20.0].iter().map(|d| d.to_radians()).collect();
    let opts = SweepOptions { timing_repeats: 1, ..SweepOptions::default() };
    sweep_with(&deltas, (0.6, 2.0), 30, SweepMethod::Adesa, &RobotParams::table1(), &opts).unwrap()
}

#[test]
fn geometric_guess_needs_few_newton_iterations() {
    let p = RobotParams::table1();
    let table = grid();
    let mut worst = 0;
    for row in table.of(Method::Adesa) {
        let Some(pt) = &row.point else { continue };
        let spec = EquilibriumSpec::steering_and_yaw_rate(row.delta, row.psi_dot).unwrap().with_guess(pt.xi);
        let n = solve_numeric(&spec, &p).unwrap();
        assert!(n.residual_norm <= 1e-8);
        worst = worst.max(n.iterations);
    }
    assert!(worst <= 15, "{worst} iterations");
}

#[test]
fn solution_set_is_mirror_symmetric() {
    let p = RobotParams::table1();
    let deltas = [(-10f64).to_radians(), (-15f64).to_radians()];
    let opts = SweepOptions { timing_repeats: 1, ..SweepOptions::default() };
    let table = sweep_with(&deltas, (0.6, 2.0), 10, SweepMethod::Numeric, &p, &opts).unwrap();
    for row in table.of(Method::Numeric) {
        let xi = row.point.as_ref().unwrap().xi;
        let m = xi.mirrored();
        assert!(residual(&m, &p).unwrap().norm() <= 1e-8);
        let spec = EquilibriumSpec::steering_and_yaw_rate(m.delta, m.psi_dot).unwrap().with_guess(m);
        let back = solve_numeric(&spec, &p).unwrap().xi;
        for (a, b) in back.to_array().iter().zip(m.to_array()) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{back:?} vs {m:?}");
        }
    }
}

#[test]
fn geometric_solver_is_bit_deterministic() {
    let p = RobotParams::table1();
    for &(d, w) in &[(-15.0f64, 1.2), (-5.0, 0.6), (-10.0, 1.9)] {
        let a = solve_adesa(d.to_radians(), w, &p, &AdesaOptions::default()).unwrap();
        let b = solve_adesa(d.to_radians(), w, &p, &AdesaOptions::default()).unwrap();
        assert_eq!(a.xi.to_array().map(f64::to_bits), b.xi.to_array().map(f64::to_bits));
        let radius = p.mu * p.gravity / (w * w);
        assert!((a.geometry.rear_radius - radius).abs() <= 1e-12 * radius);
    }
}
