use crate::error::{domain, invalid, Result};

use super::compartment::ct_on_grid;
use super::curve::{interpolate, running_integral, uniform_grid, TimeActivityCurve};
use super::input::InputFunction;
use super::params::{KineticParams, Tracer};
use super::schedule::FrameSchedule;

/// Decay-weighted frame integrals
/// `x_k = ∫ ((1−V_B)·C_T + V_B·C_B)·e^(−λτ) dτ` over each frame, by the
/// trapezoidal rule on the curves' own grid.
pub fn frame_activity(
    ct: &TimeActivityCurve,
    cb: &TimeActivityCurve,
    p: &KineticParams,
    tracer: &Tracer,
    schedule: &FrameSchedule,
) -> Result<Vec<f64>> {
    if ct.times != cb.times {
        return Err(invalid("tissue and blood curves must share a time grid"));
    }
    if !(0.0..=1.0).contains(&p.vb) {
        return Err(invalid(format!("V_B must lie in [0, 1], got {}", p.vb)));
    }
    let decay: Vec<f64> = ct.times.iter().map(|t| (-tracer.decay_constant * t).exp()).collect();
    integrate_frames(&ct.times, &ct.values, &cb.values, p.vb, &decay, schedule)
}

fn integrate_frames(
    times: &[f64],
    ct: &[f64],
    cb: &[f64],
    vb: f64,
    decay: &[f64],
    schedule: &FrameSchedule,
) -> Result<Vec<f64>> {
    let (first, last) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(invalid("empty curve")),
    };
    if first > 1e-9 || last < schedule.end() - 1e-9 {
        return Err(domain(format!(
            "curves cover [{first}, {last}] min but the schedule runs to {} min",
            schedule.end()
        )));
    }
    let integrand: Vec<f64> = (0..times.len()).map(|i| ((1.0 - vb) * ct[i] + vb * cb[i]) * decay[i]).collect();
    let out = schedule
        .frames()
        .iter()
        .map(|&(ts, te)| integrate_window(times, &integrand, ts, te))
        .collect::<Vec<_>>();
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

/// Trapezoidal integral of the nodal values over `[ts, te]`; endpoints that
/// fall between nodes are linearly interpolated.
fn integrate_window(times: &[f64], f: &[f64], ts: f64, te: f64) -> f64 {
    const SNAP: f64 = 1e-9;
    let lo = times.partition_point(|&t| t < ts - SNAP);
    let hi = times.partition_point(|&t| t <= te + SNAP);
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(hi.saturating_sub(lo) + 2);
    if lo >= times.len() || (times[lo] - ts).abs() > SNAP {
        nodes.push((ts, interpolate(times, f, ts).unwrap_or(0.0)));
    }
    nodes.extend((lo..hi).map(|i| (times[i], f[i])));
    if hi == 0 || (times[hi - 1] - te).abs() > SNAP {
        nodes.push((te, interpolate(times, f, te).unwrap_or(0.0)));
    }
    nodes.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// Precomputed dense-grid state for repeatedly mapping kinetic parameters to
/// frame values with a fixed input, tracer and schedule.
#[derive(Clone, Debug)]
pub struct FrameModel {
    grid: Vec<f64>,
    plasma: Vec<f64>,
    blood: Vec<f64>,
    decay: Vec<f64>,
    schedule: FrameSchedule,
    tracer: Tracer,
    plasma_integral: Vec<f64>,
}

impl FrameModel {
    pub fn new(cp: &InputFunction, tracer: &Tracer, schedule: &FrameSchedule, steps_per_min: usize) -> Result<Self> {
        if steps_per_min == 0 {
            return Err(invalid("steps per minute must be > 0"));
        }
        let grid = uniform_grid(schedule.end(), steps_per_min);
        let (plasma, _) = cp.sample_plasma(&grid)?;
        let (blood, _) = cp.sample_blood(&grid)?;
        let decay = grid.iter().map(|t| (-tracer.decay_constant * t).exp()).collect();
        let plasma_integral = running_integral(&grid, &plasma);
        Ok(Self { grid, plasma, blood, decay, schedule: schedule.clone(), tracer: tracer.clone(), plasma_integral })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn schedule(&self) -> &FrameSchedule {
        &self.schedule
    }

    pub fn tracer(&self) -> &Tracer {
        &self.tracer
    }

    pub fn plasma(&self) -> TimeActivityCurve {
        TimeActivityCurve { times: self.grid.clone(), values: self.plasma.clone() }
    }

    pub fn blood(&self) -> TimeActivityCurve {
        TimeActivityCurve { times: self.grid.clone(), values: self.blood.clone() }
    }

    /// Running integral of the plasma curve on the dense grid.
    pub fn plasma_integral(&self) -> &[f64] {
        &self.plasma_integral
    }

    pub fn tissue(&self, p: &KineticParams) -> Result<Vec<f64>> {
        ct_on_grid(p, &self.grid, &self.plasma)
    }

    pub fn tissue_curve(&self, p: &KineticParams) -> Result<TimeActivityCurve> {
        Ok(TimeActivityCurve { times: self.grid.clone(), values: self.tissue(p)? })
    }

    /// Frame values `x_k` for one voxel.
    pub fn frames(&self, p: &KineticParams) -> Result<Vec<f64>> {
        p.validate()?;
        let ct = self.tissue(p)?;
        self.frames_from_tissue(&ct, p.vb)
    }

    pub fn frames_from_tissue(&self, ct: &[f64], vb: f64) -> Result<Vec<f64>> {
        integrate_frames(&self.grid, ct, &self.blood, vb, &self.decay, &self.schedule)
    }

    /// `∫ e^(−λτ) dτ` over each frame, used to decay-correct frame integrals
    /// into mean concentrations.
    pub fn decay_weights(&self) -> Vec<f64> {
        let lambda = self.tracer.decay_constant;
        self.schedule
            .frames()
            .iter()
            .map(|&(ts, te)| {
                if lambda == 0.0 {
                    te - ts
                } else {
                    ((-lambda * ts).exp() - (-lambda * te).exp()) / lambda
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{ct_analytic, FengCoefficients};

    fn constant(c: f64, end: f64) -> TimeActivityCurve {
        let g = uniform_grid(end, 60);
        let n = g.len();
        TimeActivityCurve::new(g, vec![c; n]).unwrap()
    }

    #[test]
    fn constant_integrand() {
        let ct = constant(2.5, 2.0);
        let s = FrameSchedule::new(vec![(0.0, 2.0)]).unwrap();
        let x = frame_activity(&ct, &ct, &KineticParams::default(), &Tracer::stable("t"), &s).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn blood_only_voxel_ignores_tissue() {
        let s = FrameSchedule::standard_18();
        let cb = constant(1.0, 60.0);
        let p = KineticParams::new(0.1, 0.1, 0.0, 0.0, 1.0);
        let tracer = Tracer::from_half_life("f", 109.77, false).unwrap();
        let a = frame_activity(&constant(3.0, 60.0), &cb, &p, &tracer, &s).unwrap();
        let b = frame_activity(&constant(99.0, 60.0), &cb, &p, &tracer, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_past_support_is_rejected() {
        let ct = constant(1.0, 10.0);
        let s = FrameSchedule::standard_18();
        assert!(frame_activity(&ct, &ct, &KineticParams::default(), &Tracer::stable("t"), &s).is_err());
    }

    #[test]
    fn off_grid_boundaries_are_interpolated() {
        let ct = constant(1.0, 2.0);
        let s = FrameSchedule::new(vec![(0.0, 0.123456), (0.123456, 2.0)]).unwrap();
        let x = frame_activity(&ct, &ct, &KineticParams::default(), &Tracer::stable("t"), &s).unwrap();
        assert!((x[0] - 0.123456).abs() < 1e-12);
        assert!((x[1] - (2.0 - 0.123456)).abs() < 1e-12);
    }

    #[test]
    fn model_matches_scalar_pipeline_exactly() {
        let cp = InputFunction::feng(FengCoefficients {
            a1: 851.1225,
            a2: 21.8798,
            a3: 20.8113,
            lambda1: 4.133859,
            lambda2: 0.01043449,
            lambda3: 0.1190996,
        })
        .unwrap();
        let tracer = Tracer::from_half_life("f", 109.77, false).unwrap();
        let s = FrameSchedule::standard_18();
        let model = FrameModel::new(&cp, &tracer, &s, 60).unwrap();
        let p = KineticParams::new(0.1, 0.12, 0.06, 0.006, 0.04);
        let ct = TimeActivityCurve { times: model.grid().to_vec(), values: ct_on_grid(&p, model.grid(), &model.plasma().values).unwrap() };
        let direct = frame_activity(&ct, &model.blood(), &p, &tracer, &s).unwrap();
        assert_eq!(model.frames(&p).unwrap(), direct);
    }

    #[test]
    fn dense_model_tracks_refined_analytic_curve() {
        let cp = InputFunction::feng(FengCoefficients::fdg()).unwrap();
        let model = FrameModel::new(&cp, &Tracer::stable("t"), &FrameSchedule::standard_18(), 60).unwrap();
        let p = KineticParams::new(0.3, 0.2, 0.1, 0.02, 0.0);
        let coarse = model.tissue(&p).unwrap();
        let fine = ct_analytic(&p, &cp, model.grid()).unwrap().values;
        let peak = fine.iter().copied().fold(0.0, f64::max);
        for (a, b) in coarse.iter().zip(&fine) {
            if *b > 0.01 * peak {
                assert!((a - b).abs() <= 1e-2 * b, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn decay_weights_reduce_to_durations() {
        let s = FrameSchedule::standard_18();
        let m = FrameModel::new(&InputFunction::zero(60.0), &Tracer::stable("t"), &s, 60).unwrap();
        assert_eq!(m.decay_weights(), s.durations());
    }
}
