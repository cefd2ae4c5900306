use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense-grid resolution: one sample per second.
pub const DEFAULT_STEPS_PER_MIN: usize = 60;

/// Concentration samples on a strictly increasing time grid (minutes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeActivityCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeActivityCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(invalid(format!("curve has {} times but {} values", times.len(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("curve values must be finite"));
        }
        check_grid(&times)?;
        Ok(Self { times, values })
    }

    pub fn zeros(times: Vec<f64>) -> Self {
        let values = vec![0.0; times.len()];
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { times: self.times.clone(), values: self.values.iter().map(|v| v * alpha).collect() }
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn at(&self, t: f64) -> Option<f64> {
        interpolate(&self.times, &self.values, t)
    }
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("time grid contains non-finite values"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> Option<f64> {
    let (first, last) = (*times.first()?, *times.last()?);
    if t < first - 1e-9 || t > last + 1e-9 {
        return None;
    }
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return Some(values[0]);
    }
    if i >= times.len() {
        return Some(values[times.len() - 1]);
    }
    if times[i] == t {
        return Some(values[i]);
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let w = (t - t0) / (t1 - t0);
    Some(values[i - 1] + w * (values[i] - values[i - 1]))
}

/// Grid `0, 1/n, 2/n, …, end` with `n` points per minute. Frame boundaries at
/// whole multiples of `1/n` land exactly on grid points.
pub fn uniform_grid(end: f64, steps_per_min: usize) -> Vec<f64> {
    let n = steps_per_min as f64;
    let count = (end * n).round() as usize;
    (0..=count).map(|i| i as f64 / n).collect()
}

/// Running trapezoidal integral, zero at the first point.
pub fn cumulative_trapezoid(curve: &TimeActivityCurve) -> Result<TimeActivityCurve> {
    if curve.len() < 2 {
        return Err(invalid("cumulative integral needs at least 2 points"));
    }
    check_grid(&curve.times)?;
    Ok(TimeActivityCurve { times: curve.times.clone(), values: running_integral(&curve.times, &curve.values) })
}

pub(crate) fn running_integral(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..values.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        out.push(acc);
    }
    out
}
