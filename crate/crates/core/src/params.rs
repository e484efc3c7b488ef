//! Physical parameters of the robot and their flat key/value config format.
//!
//! The on-disk document is a flat TOML table. Keys use the conventional
//! symbols (`m`, `ic_xx`, `a`, `b`, ...). The caster angle is written in
//! degrees (`lambda_deg`) and converted to radians at load time. Keys that
//! are absent fall back to [`RobotParams::table1`]; unknown keys are rejected.

use serde::Deserialize;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("failed to parse parameter document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid parameters: {invariant} violated ({detail})")]
    Invalid {
        invariant: &'static str,
        detail: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Physical constants of the single-track robot. Angles in radians, SI units otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    /// Total mass `m` [kg].
    pub mass: f64,
    /// Body roll inertia `Ic_xx` [kg m^2].
    pub roll_inertia: f64,
    /// Body yaw inertia `Ic_zz` [kg m^2].
    pub yaw_inertia: f64,
    /// Front wheel spin inertia `I_f` [kg m^2].
    pub front_wheel_inertia: f64,
    /// Rear wheel spin inertia `I_r` [kg m^2].
    pub rear_wheel_inertia: f64,
    /// Horizontal distance from the rear contact point to the COM, `a` [m].
    pub com_offset: f64,
    /// Wheelbase `b` [m].
    pub wheelbase: f64,
    /// Trail `c` [m]. Carried for completeness; no equation of motion uses it.
    pub trail: f64,
    /// COM height `h` [m].
    pub com_height: f64,
    /// Wheel radius `r` [m].
    pub wheel_radius: f64,
    /// Caster angle `lambda` [rad].
    pub caster: f64,
    /// Rear Coulomb friction coefficient `mu`.
    pub mu: f64,
    /// Gravitational acceleration `g` [m/s^2].
    pub gravity: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self::table1()
    }
}

impl RobotParams {
    /// Reference robot: 5.435 kg, 0.402 m wheelbase, 25 degree caster, mu = 0.3.
    pub fn table1() -> Self {
        Self {
            mass: 5.435,
            roll_inertia: 3.31e-2,
            yaw_inertia: 9.40e-2,
            front_wheel_inertia: 2.03e-2,
            rear_wheel_inertia: 2.17e-2,
            com_offset: 0.164,
            wheelbase: 0.402,
            trail: 0.023,
            com_height: 0.195,
            wheel_radius: 0.100,
            caster: 25.0_f64.to_radians(),
            mu: 0.3,
            gravity: 9.81,
        }
    }

    /// Returns a copy with a different friction coefficient.
    pub fn with_mu(&self, mu: f64) -> Self {
        Self { mu, ..*self }
    }

    /// Checks every invariant and reports the first violated one by name.
    pub fn validate(&self) -> Result<(), ParamsError> {
        let fields = [
            ("m", self.mass),
            ("ic_xx", self.roll_inertia),
            ("ic_zz", self.yaw_inertia),
            ("i_f", self.front_wheel_inertia),
            ("i_r", self.rear_wheel_inertia),
            ("a", self.com_offset),
            ("b", self.wheelbase),
            ("c", self.trail),
            ("h", self.com_height),
            ("r", self.wheel_radius),
            ("lambda", self.caster),
            ("mu", self.mu),
            ("g", self.gravity),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(invalid("finite values", format!("{name} = {value}")));
            }
        }
        let positive = [
            ("m > 0", self.mass),
            ("ic_xx > 0", self.roll_inertia),
            ("ic_zz > 0", self.yaw_inertia),
            ("i_f > 0", self.front_wheel_inertia),
            ("i_r > 0", self.rear_wheel_inertia),
            ("b > 0", self.wheelbase),
            ("h > 0", self.com_height),
            ("r > 0", self.wheel_radius),
            ("g > 0", self.gravity),
        ];
        for (invariant, value) in positive {
            if value <= 0.0 {
                return Err(invalid(invariant, format!("got {value}")));
            }
        }
        if self.com_offset <= 0.0 {
            return Err(invalid("0 < a", format!("a = {}", self.com_offset)));
        }
        if self.com_offset >= self.wheelbase {
            return Err(invalid(
                "a < b",
                format!("a = {}, b = {}", self.com_offset, self.wheelbase),
            ));
        }
        if self.mu < 0.0 {
            return Err(invalid("mu >= 0", format!("mu = {}", self.mu)));
        }
        if self.caster < 0.0 || self.caster >= std::f64::consts::FRAC_PI_2 {
            return Err(invalid(
                "0 <= lambda < 90 deg",
                format!("lambda = {} deg", self.caster.to_degrees()),
            ));
        }
        if self.trail < 0.0 {
            return Err(invalid("c >= 0", format!("c = {}", self.trail)));
        }
        Ok(())
    }

    /// Renders the parameters as a config document that [`load_params`] reads back exactly.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, f64, &str); 13] = [
            ("m", self.mass, "total mass [kg]"),
            ("ic_xx", self.roll_inertia, "body roll inertia [kg m^2]"),
            ("ic_zz", self.yaw_inertia, "body yaw inertia [kg m^2]"),
            ("i_f", self.front_wheel_inertia, "front wheel spin inertia [kg m^2]"),
            ("i_r", self.rear_wheel_inertia, "rear wheel spin inertia [kg m^2]"),
            ("a", self.com_offset, "rear contact to COM, horizontal [m]"),
            ("b", self.wheelbase, "wheelbase [m]"),
            ("c", self.trail, "trail [m] (unused by the dynamics)"),
            ("h", self.com_height, "COM height [m]"),
            ("r", self.wheel_radius, "wheel radius [m]"),
            ("lambda_deg", degrees_exact(self.caster), "caster angle [deg]"),
            ("mu", self.mu, "rear Coulomb friction coefficient [-]"),
            ("g", self.gravity, "gravitational acceleration [m/s^2]"),
        ];
        for (key, value, doc) in rows {
            // `{:?}` prints the shortest representation that parses back to the same f64.
            let _ = writeln!(out, "{key} = {value:?}  # {doc}");
        }
        out
    }
}

fn invalid(invariant: &'static str, detail: String) -> ParamsError {
    ParamsError::Invalid { invariant, detail }
}

/// Degree value whose `to_radians()` reproduces `rad` bit for bit when one exists nearby.
fn degrees_exact(rad: f64) -> f64 {
    let first = rad.to_degrees();
    let mut lo = first;
    let mut hi = first;
    for _ in 0..64 {
        if lo.to_radians() == rad {
            return lo;
        }
        if hi.to_radians() == rad {
            return hi;
        }
        lo = lo.next_down();
        hi = hi.next_up();
    }
    first
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ParamsDoc {
    m: Option<f64>,
    ic_xx: Option<f64>,
    ic_zz: Option<f64>,
    i_f: Option<f64>,
    i_r: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    h: Option<f64>,
    r: Option<f64>,
    lambda_deg: Option<f64>,
    mu: Option<f64>,
    g: Option<f64>,
}

impl ParamsDoc {
    pub(crate) fn resolve(self) -> Result<RobotParams, ParamsError> {
        let d = RobotParams::table1();
        let p = RobotParams {
            mass: self.m.unwrap_or(d.mass),
            roll_inertia: self.ic_xx.unwrap_or(d.roll_inertia),
            yaw_inertia: self.ic_zz.unwrap_or(d.yaw_inertia),
            front_wheel_inertia: self.i_f.unwrap_or(d.front_wheel_inertia),
            rear_wheel_inertia: self.i_r.unwrap_or(d.rear_wheel_inertia),
            com_offset: self.a.unwrap_or(d.com_offset),
            wheelbase: self.b.unwrap_or(d.wheelbase),
            trail: self.c.unwrap_or(d.trail),
            com_height: self.h.unwrap_or(d.com_height),
            wheel_radius: self.r.unwrap_or(d.wheel_radius),
            caster: self.lambda_deg.map_or(d.caster, f64::to_radians),
            mu: self.mu.unwrap_or(d.mu),
            gravity: self.g.unwrap_or(d.gravity),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Parses a flat parameter document. Missing keys take the reference values.
pub fn load_params(source: &str) -> Result<RobotParams, ParamsError> {
    let doc: ParamsDoc = toml::from_str(source)?;
    doc.resolve()
}

pub fn load_params_file(path: impl AsRef<Path>) -> Result<RobotParams, ParamsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_params(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table1_values() {
        let p = RobotParams::table1();
        assert_eq!(p.mass, 5.435);
        assert_eq!(p.com_offset, 0.164);
        assert_eq!(p.wheelbase, 0.402);
        assert_eq!(p.com_height, 0.195);
        assert_eq!(p.wheel_radius, 0.100);
        assert_eq!(p.mu, 0.3);
        assert_relative_eq!(p.caster.to_degrees(), 25.0, epsilon = 1e-12);
        assert_eq!(p.roll_inertia, 3.31e-2);
        assert_eq!(p.yaw_inertia, 9.40e-2);
        assert_eq!(p.front_wheel_inertia, 2.03e-2);
        assert_eq!(p.rear_wheel_inertia, 2.17e-2);
        assert_eq!(p.trail, 0.023);
        assert_eq!(p.gravity, 9.81);
        p.validate().unwrap();
    }

    #[test]
    fn single_override() {
        let p = load_params("mu = 0.25\n").unwrap();
        assert_eq!(p.mu, 0.25);
        assert_eq!(p, RobotParams::table1().with_mu(0.25));
    }

    #[test]
    fn com_beyond_wheelbase_is_rejected() {
        let err = load_params("a = 0.5").unwrap_err();
        match err {
            ParamsError::Invalid { invariant, .. } => assert_eq!(invariant, "a < b"),
            other => panic!("unexpected error {other}"),
        }
        assert!(load_params("a = 0.5").unwrap_err().to_string().contains("a < b"));
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(load_params("").unwrap(), RobotParams::table1());
        assert_eq!(load_params("# only a comment\n").unwrap(), RobotParams::table1());
    }

    #[test]
    fn unknown_key_fails_closed() {
        assert!(matches!(load_params("mass = 3.0"), Err(ParamsError::Parse(_))));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(load_params("m = = 3"), Err(ParamsError::Parse(_))));
        assert!(matches!(load_params("m = \"heavy\""), Err(ParamsError::Parse(_))));
    }

    #[test]
    fn integer_values_are_accepted() {
        let p = load_params("g = 10").unwrap();
        assert_eq!(p.gravity, 10.0);
    }

    #[test]
    fn invariants_are_named() {
        let cases = [
            ("m = 0", "m > 0"),
            ("h = -0.1", "h > 0"),
            ("mu = -0.1", "mu >= 0"),
            ("lambda_deg = 90", "0 <= lambda < 90 deg"),
            ("c = -0.01", "c >= 0"),
            ("a = 0", "0 < a"),
        ];
        for (doc, name) in cases {
            match load_params(doc) {
                Err(ParamsError::Invalid { invariant, .. }) => assert_eq!(invariant, name, "{doc}"),
                other => panic!("{doc}: expected invalid, got {other:?}"),
            }
        }
    }

    #[test]
    fn shipped_table1_file_matches_defaults() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../params/table1.toml");
        assert_eq!(load_params_file(path).unwrap(), RobotParams::table1());
    }

    #[test]
    fn caster_degree_conversion_round_trips() {
        for deg in [0.0, 1.0, 12.345, 25.0, 33.3, 89.9] {
            let rad: f64 = (deg as f64).to_radians();
            assert_eq!(degrees_exact(rad).to_radians(), rad);
        }
    }
}
