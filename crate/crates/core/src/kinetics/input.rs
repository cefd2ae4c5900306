use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Coefficients of the three-exponential plasma input model
/// `Cp(t) = (A1·t − A2 − A3)·e^(−λ1·t) + A2·e^(−λ2·t) + A3·e^(−λ3·t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FengCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl FengCoefficients {
    /// Population FDG input (concentrations in kBq/mL, times in minutes).
    pub fn fdg() -> Self {
        Self { a1: 851.1225, a2: 21.8798, a3: 20.8113, lambda1: 4.133859, lambda2: 0.01043449, lambda3: 0.1190996 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.a3, self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite input function coefficient in {self:?}")));
        }
        if self.lambda1 <= 0.0 || self.lambda2 <= 0.0 || self.lambda3 <= 0.0 {
            return Err(invalid("input function decay exponents must be > 0"));
        }
        Ok(())
    }
}

/// Unclamped model value; may dip below zero for unphysical coefficients.
pub fn feng_input_raw(c: &FengCoefficients, t: f64) -> f64 {
    (c.a1 * t - c.a2 - c.a3) * (-c.lambda1 * t).exp()
        + c.a2 * (-c.lambda2 * t).exp()
        + c.a3 * (-c.lambda3 * t).exp()
}

/// Plasma concentration at `t` minutes, clamped at zero.
pub fn feng_input(c: &FengCoefficients, t: f64) -> Result<f64> {
    c.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    Ok(feng_input_raw(c, t).max(0.0))
}

/// One concentration curve, either analytic or tabulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCurve {
    Feng(FengCoefficients),
    Sampled { times: Vec<f64>, values: Vec<f64> },
}

impl InputCurve {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputCurve::Feng(c) => c.validate(),
            InputCurve::Sampled { times, values } => {
                if times.len() != values.len() || times.len() < 2 {
                    return Err(invalid("sampled curve needs >= 2 points and equal lengths"));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("sampled curve times must be strictly increasing"));
                }
                if times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
                    return Err(invalid("sampled curve times must be finite and >= 0"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid("sampled curve values must be finite and >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Value at `t`, or `None` past the end of a tabulated curve.
    /// Tabulated curves ramp linearly from zero at `t = 0` to their first sample.
    fn value_at(&self, t: f64) -> Option<(f64, bool)> {
        match self {
            InputCurve::Feng(c) => {
                let raw = feng_input_raw(c, t);
                Some((raw.max(0.0), raw < 0.0))
            }
            InputCurve::Sampled { times, values } => {
                let last = *times.last()?;
                if t > last + 1e-9 {
                    return None;
                }
                if t <= times[0] {
                    let v = if times[0] > 0.0 { values[0] * t / times[0] } else { values[0] };
                    return Some((v, false));
                }
                let i = times.partition_point(|&x| x <= t).min(times.len() - 1);
                let (t0, t1) = (times[i - 1], times[i]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                Some((values[i - 1] * (1.0 - w) + values[i] * w, false))
            }
        }
    }

    fn end(&self) -> f64 {
        match self {
            InputCurve::Feng(_) => f64::INFINITY,
            InputCurve::Sampled { times, .. } => *times.last().unwrap_or(&0.0),
        }
    }
}

/// Plasma input `Cp(t)` plus an optional whole-blood curve `C_B(t)`; when the
/// latter is absent the plasma curve is used for blood as well.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFunction {
    pub plasma: InputCurve,
    #[serde(default)]
    pub whole_blood: Option<InputCurve>,
}

impl InputFunction {
    pub fn new(plasma: InputCurve, whole_blood: Option<InputCurve>) -> Result<Self> {
        plasma.validate()?;
        if let Some(b) = &whole_blood {
            b.validate()?;
        }
        Ok(Self { plasma, whole_blood })
    }

    pub fn feng(c: FengCoefficients) -> Result<Self> {
        Self::new(InputCurve::Feng(c), None)
    }

    pub fn sampled(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(InputCurve::Sampled { times, values }, None)
    }

    /// A zero plasma curve over `[0, end]`.
    pub fn zero(end: f64) -> Self {
        Self { plasma: InputCurve::Sampled { times: vec![0.0, end], values: vec![0.0, 0.0] }, whole_blood: None }
    }

    pub fn blood(&self) -> &InputCurve {
        self.whole_blood.as_ref().unwrap_or(&self.plasma)
    }

    /// Latest time covered by both curves.
    pub fn support_end(&self) -> f64 {
        self.plasma.end().min(self.blood().end())
    }

    /// Plasma concentration at `t`; tabulated curves hold their last value past the end.
    pub fn plasma_at(&self, t: f64) -> f64 {
        plasma_or_hold(&self.plasma, t)
    }

    /// Plasma values on `grid`, with the number of points that were clamped at zero.
    pub fn sample_plasma(&self, grid: &[f64]) -> Result<(Vec<f64>, usize)> {
        sample_curve(&self.plasma, grid)
    }

    pub fn sample_blood(&self, grid: &[f64]) -> Result<(Vec<f64>, usize)> {
        sample_curve(self.blood(), grid)
    }
}

fn plasma_or_hold(curve: &InputCurve, t: f64) -> f64 {
    match curve.value_at(t) {
        Some((v, _)) => v,
        None => match curve {
            InputCurve::Sampled { values, .. } => *values.last().unwrap_or(&0.0),
            InputCurve::Feng(_) => 0.0,
        },
    }
}

fn sample_curve(curve: &InputCurve, grid: &[f64]) -> Result<(Vec<f64>, usize)> {
    let mut clamped = 0;
    let values = grid
        .iter()
        .map(|&t| {
            let (v, c) = curve
                .value_at(t)
                .ok_or_else(|| domain(format!("input curve does not cover t = {t} min")))?;
            clamped += c as usize;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((values, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs() -> FengCoefficients {
        FengCoefficients { a1: 851.1225, a2: 21.8798, a3: 20.8113, lambda1: 4.133859, lambda2: 0.01043449, lambda3: 0.1190996 }
    }

    #[test]
    fn zero_at_origin() {
        assert_eq!(feng_input(&coeffs(), 0.0).unwrap(), 0.0);
        let c = FengCoefficients { a1: 3.0, a2: 1.0, a3: 7.0, lambda1: 2.0, lambda2: 0.1, lambda3: 0.5 };
        assert!(feng_input_raw(&c, 0.0).abs() < 1e-15);
    }

    #[test]
    fn zero_curve() {
        let c = FengCoefficients { a1: 0.0, a2: 0.0, a3: 0.0, lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 };
        for t in [0.0, 0.3, 10.0, 59.0] {
            assert_eq!(feng_input(&c, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        let mut c = coeffs();
        c.a2 = f64::NAN;
        assert!(feng_input(&c, 1.0).is_err());
        let mut c = coeffs();
        c.lambda2 = 0.0;
        assert!(feng_input(&c, 1.0).is_err());
        assert!(feng_input(&coeffs(), -1.0).is_err());
    }

    #[test]
    fn negative_values_are_clamped_and_counted() {
        // A1 = 0 makes the early curve negative: (−A2−A3)e^(−λ1 t) dominates.
        let c = FengCoefficients { a1: 0.0, a2: 1.0, a3: 1.0, lambda1: 0.5, lambda2: 2.0, lambda3: 2.0 };
        let input = InputFunction::feng(c).unwrap();
        let (vals, clamped) = input.sample_plasma(&[0.5, 1.0, 2.0]).unwrap();
        assert!(clamped > 0);
        assert!(vals.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sampled_interpolation_and_support() {
        let input = InputFunction::sampled(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 4.0]).unwrap();
        let (v, _) = input.sample_plasma(&[0.5, 2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, 3.0, 4.0]);
        assert!(input.sample_plasma(&[3.5]).is_err());
        assert!(InputFunction::sampled(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(InputFunction::sampled(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }
}
