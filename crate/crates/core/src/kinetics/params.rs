use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A radiotracer: name, physical decay and whether its binding is reversible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracer {
    pub name: String,
    /// Decay constant in 1/min.
    pub decay_constant: f64,
    pub reversible: bool,
}

impl Tracer {
    pub fn new(name: impl Into<String>, decay_constant: f64, reversible: bool) -> Result<Self> {
        if !(decay_constant.is_finite() && decay_constant >= 0.0) {
            return Err(invalid(format!("decay constant must be >= 0, got {decay_constant}")));
        }
        Ok(Self { name: name.into(), decay_constant, reversible })
    }

    pub fn from_half_life(name: impl Into<String>, half_life_min: f64, reversible: bool) -> Result<Self> {
        if !(half_life_min.is_finite() && half_life_min > 0.0) {
            return Err(invalid(format!("half-life must be > 0, got {half_life_min}")));
        }
        Self::new(name, std::f64::consts::LN_2 / half_life_min, reversible)
    }

    /// A tracer with no decay; handy for analytic checks.
    pub fn stable(name: impl Into<String>) -> Self {
        Self { name: name.into(), decay_constant: 0.0, reversible: true }
    }
}

/// Rate constants of the two-tissue compartment model plus the blood volume
/// fraction of the voxel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    #[serde(default)]
    pub vb: f64,
}

impl KineticParams {
    pub const fn new(k1: f64, k2: f64, k3: f64, k4: f64, vb: f64) -> Self {
        Self { k1, k2, k3, k4, vb }
    }

    pub fn rates(&self) -> [f64; 4] {
        [self.k1, self.k2, self.k3, self.k4]
    }

    pub fn with_rates(&self, rates: [f64; 4]) -> Self {
        Self { k1: rates[0], k2: rates[1], k3: rates[2], k4: rates[3], vb: self.vb }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("K1", self.k1), ("k2", self.k2), ("k3", self.k3), ("k4", self.k4)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.vb.is_finite() && (0.0..=1.0).contains(&self.vb)) {
            return Err(invalid(format!("V_B must lie in [0, 1], got {}", self.vb)));
        }
        Ok(())
    }

    /// Total distribution volume `(K1/k2)(1 + k3/k4)` of a reversible tracer.
    pub fn distribution_volume(&self) -> f64 {
        self.k1 / self.k2 * (1.0 + self.k3 / self.k4)
    }

    /// Net influx constant `K1·k3/(k2+k3)` of an irreversible tracer.
    pub fn influx_constant(&self) -> f64 {
        self.k1 * self.k3 / (self.k2 + self.k3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_life_presets() {
        let f18 = Tracer::from_half_life("fdg", 109.77, false).unwrap();
        assert!((f18.decay_constant - 0.006314).abs() < 1e-6);
        let c11 = Tracer::from_half_life("fmz", 20.36, true).unwrap();
        assert!((c11.decay_constant - 0.034044).abs() < 1e-6);
        assert!(Tracer::new("x", -1.0, true).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(KineticParams::new(0.1, 0.1, 0.1, 0.0, 0.05).validate().is_ok());
        assert!(KineticParams::new(-0.1, 0.1, 0.1, 0.0, 0.05).validate().is_err());
        assert!(KineticParams::new(0.1, 0.1, 0.1, 0.0, 1.5).validate().is_err());
        assert!(KineticParams::new(f64::NAN, 0.1, 0.1, 0.0, 0.0).validate().is_err());
    }

    #[test]
    fn macro_parameters() {
        let p = KineticParams::new(0.1, 0.12, 0.06, 0.006, 0.0);
        assert!((p.distribution_volume() - 0.1 / 0.12 * 11.0).abs() < 1e-12);
        assert!((p.influx_constant() - 0.1 * 0.06 / 0.18).abs() < 1e-12);
    }
}
