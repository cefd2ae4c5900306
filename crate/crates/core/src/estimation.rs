//! Voxelwise nonlinear least-squares fitting of the compartment model to
//! frame values: Levenberg–Marquardt with a finite-difference Jacobian,
//! Marquardt diagonal scaling and projection onto box bounds.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{DynamicImage, Image, ParamMap};
use crate::kinetics::{FrameModel, KineticParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Starting `(K1, k2, k3, k4)`.
    pub init: [f64; 4],
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub tolerance: f64,
    /// Blood fraction, held fixed.
    pub vb: f64,
    /// Relative finite-difference step (times the bound width).
    pub jacobian_step: f64,
}

impl FitConfig {
    /// Bounds `[0, factor·max_mean]` per rate constant, started at the box midpoint.
    pub fn from_means(means: &[KineticParams], factor: f64, vb: f64) -> Result<Self> {
        if means.is_empty() || !(factor > 0.0) {
            return Err(invalid("fit bounds need at least one parameter set and a positive factor"));
        }
        let mut upper = [0.0f64; 4];
        for p in means {
            for (u, r) in upper.iter_mut().zip(p.rates()) {
                *u = u.max(factor * r);
            }
        }
        let init = upper.map(|u| 0.5 * u);
        let cfg = Self { init, lower: [0.0; 4], upper, max_iterations: 200, tolerance: 1e-12, vb, jacobian_step: 1e-5 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..4 {
            let (lo, x, hi) = (self.lower[j], self.init[j], self.upper[j]);
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= x && x <= hi) {
                return Err(invalid(format!("parameter {j}: need 0 <= lower <= init <= upper, got {lo}, {x}, {hi}")));
            }
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.jacobian_step > 0.0) {
            return Err(invalid("fit: tolerance > 0, max_iterations >= 1 and jacobian_step > 0 required"));
        }
        KineticParams::new(0.0, 0.0, 0.0, 0.0, self.vb).validate()
    }

    fn project(&self, p: [f64; 4]) -> [f64; 4] {
        let mut out = p;
        for j in 0..4 {
            out[j] = p[j].clamp(self.lower[j], self.upper[j]);
        }
        out
    }

    fn step_size(&self, j: usize) -> f64 {
        let width = self.upper[j] - self.lower[j];
        self.jacobian_step * if width > 0.0 { width } else { 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: KineticParams,
    /// `‖x − model(p)‖₂`
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost `‖r‖²` after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Problem<'a> {
    model: &'a FrameModel,
    data: &'a [f64],
    cfg: &'a FitConfig,
}

impl Problem<'_> {
    fn predict(&self, p: [f64; 4]) -> Result<Vec<f64>> {
        self.model.frames(&KineticParams::new(p[0], p[1], p[2], p[3], self.cfg.vb))
    }

    fn cost(&self, pred: &[f64]) -> f64 {
        self.data.iter().zip(pred).map(|(x, m)| (x - m) * (x - m)).sum()
    }

    /// Central differences, one-sided where a probe would cross a bound.
    fn jacobian(&self, p: [f64; 4], base: &[f64], rel: f64) -> Result<Vec<[f64; 4]>> {
        let mut jac = vec![[0.0; 4]; base.len()];
        for j in 0..4 {
            let h = rel / self.cfg.jacobian_step * self.cfg.step_size(j);
            let (mut a, mut b) = (p, p);
            a[j] = (p[j] + h).min(self.cfg.upper[j]);
            b[j] = (p[j] - h).max(self.cfg.lower[j]);
            let width = a[j] - b[j];
            if width <= 0.0 {
                continue;
            }
            let fa = if a[j] == p[j] { base.to_vec() } else { self.predict(a)? };
            let fb = if b[j] == p[j] { base.to_vec() } else { self.predict(b)? };
            for (row, (x, y)) in jac.iter_mut().zip(fa.iter().zip(&fb)) {
                row[j] = (x - y) / width;
            }
        }
        Ok(jac)
    }
}

/// Jacobian of the frame model at `p` with relative step `rel` (times the
/// bound width); rows are frames.
pub fn model_jacobian(model: &FrameModel, p: [f64; 4], cfg: &FitConfig, rel: f64) -> Result<Vec<[f64; 4]>> {
    let prob = Problem { model, data: &[], cfg };
    let base = prob.predict(p)?;
    prob.jacobian(p, &base, rel)
}

/// Fits `(K1, k2, k3, k4)` to the frame values `xk`. Failure to converge is
/// reported through the flag, not as an error.
pub fn fit_voxel(xk: &[f64], model: &FrameModel, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if xk.len() != model.schedule().len() {
        return Err(Error::Shape(format!("{} frame values for a {}-frame schedule", xk.len(), model.schedule().len())));
    }
    if xk.iter().any(|v| !v.is_finite()) {
        return Err(invalid("frame values must be finite"));
    }
    let prob = Problem { model, data: xk, cfg };
    let scale2: f64 = xk.iter().map(|v| v * v).sum();
    let floor = 1e-30 * scale2.max(f64::MIN_POSITIVE);

    let mut p = cfg.project(cfg.init);
    let mut pred = prob.predict(p)?;
    let mut cost = prob.cost(&pred);
    let mut history = vec![cost];
    let mut mu = 1e-3;
    let mut converged = cost <= floor;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = prob.jacobian(p, &pred, cfg.jacobian_step)?;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (row, (x, m)) in jac.iter().zip(xk.iter().zip(&pred)) {
            let r = x - m;
            for a in 0..4 {
                jtr[a] += row[a] * r;
                for b in 0..4 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let dmax = (0..4).map(|a| jtj[(a, a)]).fold(0.0, f64::max);
        if dmax == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut lhs = jtj;
            for a in 0..4 {
                lhs[(a, a)] += mu * jtj[(a, a)].max(1e-12 * dmax);
            }
            let Some(delta) = lhs.cholesky().map(|c| c.solve(&jtr)) else {
                mu *= 4.0;
                continue;
            };
            let trial = cfg.project([p[0] + delta[0], p[1] + delta[1], p[2] + delta[2], p[3] + delta[3]]);
            let trial_pred = prob.predict(trial)?;
            let trial_cost = prob.cost(&trial_pred);
            if trial_cost < cost {
                let decrease = (cost - trial_cost) / cost;
                p = trial;
                pred = trial_pred;
                cost = trial_cost;
                history.push(cost);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if decrease < cfg.tolerance || cost <= floor {
                    converged = true;
                }
                break;
            }
            if trial == p {
                break;
            }
            mu *= 2.0;
        }
        if !accepted {
            // No descent direction left at this precision: a stationary point.
            converged = true;
        }
    }
    Ok(FitResult {
        params: KineticParams::new(p[0], p[1], p[2], p[3], cfg.vb),
        residual_norm: cost.sqrt(),
        converged,
        iterations,
        cost_history: history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitImages {
    pub params: ParamMap,
    pub residual: Image,
    pub converged: Vec<bool>,
}

/// [`fit_voxel`] over every masked voxel; unmasked voxels are zero.
pub fn fit_image(dynamic: &DynamicImage, model: &FrameModel, cfg: &FitConfig, mask: Option<&[bool]>) -> Result<FitImages> {
    let n = dynamic.n_voxels();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Shape(format!("mask has {} entries for {n} voxels", m.len())));
        }
    }
    if dynamic.schedule != *model.schedule() {
        return Err(invalid("image schedule differs from the model schedule"));
    }
    let fits: Vec<Option<FitResult>> = (0..n)
        .into_par_iter()
        .map(|v| {
            if mask.is_some_and(|m| !m[v]) {
                return Ok(None);
            }
            fit_voxel(&dynamic.voxel_series(v), model, cfg).map(Some)
        })
        .collect::<Result<_>>()?;
    let zero = KineticParams::new(0.0, 0.0, 0.0, 0.0, 0.0);
    let (w, h) = (dynamic.width, dynamic.height);
    let mut params = ParamMap { width: w, height: h, params: vec![zero; n] };
    let mut residual = Image::zeros(w, h);
    let mut converged = vec![false; n];
    for (v, f) in fits.into_iter().enumerate() {
        if let Some(f) = f {
            params.params[v] = f.params;
            residual.data[v] = f.residual_norm;
            converged[v] = f.converged;
        }
    }
    Ok(FitImages { params, residual, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{FengCoefficients, FrameSchedule, InputFunction, Tracer, DEFAULT_STEPS_PER_MIN};

    fn model() -> FrameModel {
        let cp = InputFunction::feng(FengCoefficients::fdg()).unwrap();
        let tracer = Tracer::from_half_life("FDG", 109.77, false).unwrap();
        FrameModel::new(&cp, &tracer, &FrameSchedule::standard_18(), DEFAULT_STEPS_PER_MIN).unwrap()
    }

    fn cfg() -> FitConfig {
        FitConfig::from_means(&[KineticParams::new(0.1, 0.12, 0.06, 0.006, 0.0)], 5.0, 0.0).unwrap()
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let m = model();
        let truth = KineticParams::new(0.1, 0.12, 0.06, 0.006, 0.0);
        let x = m.frames(&truth).unwrap();
        let fit = fit_voxel(&x, &m, &cfg()).unwrap();
        for (a, b) in fit.params.rates().iter().zip(truth.rates()) {
            assert!((a - b).abs() <= 0.01 * b, "{:?}", fit.params);
        }
        assert!(fit.converged);
        for w in fit.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn zero_data_gives_zero_uptake() {
        let m = model();
        let fit = fit_voxel(&[0.0; 18], &m, &cfg()).unwrap();
        assert!(fit.params.k1 < 1e-6, "{:?}", fit.params);
        assert!(fit.residual_norm < 1e-6);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.init[0] = 10.0;
        assert!(c.validate().is_err());
        assert!(FitConfig::from_means(&[], 5.0, 0.0).is_err());
        assert!(fit_voxel(&[0.0; 3], &model(), &cfg()).is_err());
    }
}
