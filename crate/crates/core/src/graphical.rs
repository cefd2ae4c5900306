//! Logan and Patlak graphical analysis and parametric image generation.
//!
//! Ratios are evaluated at frame midpoints. Points whose denominator falls
//! below `1e-9` of the curve peak are dropped rather than clamped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{DynamicImage, Image, ParamMap};
use crate::kinetics::{cumulative_trapezoid, FrameModel, FrameSchedule, TimeActivityCurve};

pub(crate) const GUARD: f64 = 1e-9;

/// Number of trailing frames used for the regression by default.
pub const DEFAULT_WINDOW_FRAMES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoganResult {
    pub slope_k: f64,
    pub intercept_b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatlakResult {
    pub ki: f64,
    pub v0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphicalMode {
    Logan,
    Patlak,
}

/// Frame indices entering the regression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FitWindow {
    frames: Vec<usize>,
}

impl FitWindow {
    pub fn new(frames: Vec<usize>, schedule: &FrameSchedule) -> Result<Self> {
        if frames.len() < 2 {
            return Err(invalid("fit window needs at least 2 frames"));
        }
        if let Some(&k) = frames.iter().find(|&&k| k >= schedule.len()) {
            return Err(invalid(format!("frame {k} outside a {}-frame schedule", schedule.len())));
        }
        Ok(Self { frames })
    }

    pub fn last(n: usize, schedule: &FrameSchedule) -> Result<Self> {
        Self::new(schedule.last_frames(n), schedule)
    }

    /// The default window: the last ten frames.
    pub fn default_for(schedule: &FrameSchedule) -> Result<Self> {
        Self::last(DEFAULT_WINDOW_FRAMES, schedule)
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }
}

/// Transformed points plus how many were dropped by the division guard.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoints {
    pub points: Vec<(f64, f64)>,
    pub dropped: usize,
}

impl PlotPoints {
    fn require_two(self) -> Result<Self> {
        if self.points.len() < 2 {
            return Err(Error::Fit(format!("only {} usable points ({} dropped)", self.points.len(), self.dropped)));
        }
        Ok(self)
    }
}

pub fn cumulative_integral(curve: &TimeActivityCurve) -> Result<TimeActivityCurve> {
    cumulative_trapezoid(curve)
}

fn peak(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn at(curve: &TimeActivityCurve, t: f64) -> Result<f64> {
    curve.at(t).ok_or_else(|| invalid(format!("curve does not cover t = {t} min")))
}

/// Logan coordinates `x = ∫C_p / C_T(t)`, `y = ∫C_T / C_T(t)` at the window's
/// frame midpoints.
pub fn logan_points(ct: &TimeActivityCurve, cp: &TimeActivityCurve, window: &FitWindow, schedule: &FrameSchedule) -> Result<PlotPoints> {
    logan_points_paired(ct, ct, cp, window, schedule)
}

/// Logan coordinates where the abscissa is normalised by a reference tissue
/// curve and the ordinate comes from a second (e.g. predicted) curve:
/// `x = ∫C_p / C_T,ref(t)`, `y = ∫C_T,pred / C_T,pred(t)`.
pub fn logan_points_paired(
    reference: &TimeActivityCurve,
    predicted: &TimeActivityCurve,
    cp: &TimeActivityCurve,
    window: &FitWindow,
    schedule: &FrameSchedule,
) -> Result<PlotPoints> {
    let cum_cp = cumulative_trapezoid(cp)?;
    let cum_pred = cumulative_trapezoid(predicted)?;
    let (eps_ref, eps_pred, eps_cp) = (GUARD * peak(&reference.values), GUARD * peak(&predicted.values), GUARD * peak(&cp.values));
    let mids = schedule.midpoints();
    let mut out = PlotPoints { points: Vec::with_capacity(window.frames().len()), dropped: 0 };
    for &k in window.frames() {
        let t = mids[k];
        let (c_ref, c_pred, c_p) = (at(reference, t)?, at(predicted, t)?, at(cp, t)?);
        if !(c_ref > eps_ref && c_pred > eps_pred && c_p > eps_cp) {
            out.dropped += 1;
            continue;
        }
        out.points.push((at(&cum_cp, t)? / c_ref, at(&cum_pred, t)? / c_pred));
    }
    out.require_two()
}

/// Tissue input of a Patlak plot.
#[derive(Clone, Copy, Debug)]
pub enum PatlakTissue<'a> {
    /// Tissue concentration curve, evaluated at frame midpoints.
    Curve(&'a TimeActivityCurve),
    /// Frame integrals with per-frame `∫e^(−λτ)dτ` weights; each frame is
    /// decay-corrected into a mean concentration before use.
    Frames { values: &'a [f64], decay_weights: &'a [f64] },
}

/// Patlak coordinates `x = ∫C_p / C_p(t)`, `y = tissue(t) / C_p(t)`.
pub fn patlak_points(tissue: PatlakTissue<'_>, cp: &TimeActivityCurve, window: &FitWindow, schedule: &FrameSchedule) -> Result<PlotPoints> {
    let cum_cp = cumulative_trapezoid(cp)?;
    let eps_cp = GUARD * peak(&cp.values);
    let mids = schedule.midpoints();
    if let PatlakTissue::Frames { values, decay_weights } = tissue {
        if values.len() != schedule.len() || decay_weights.len() != schedule.len() {
            return Err(invalid("frame values and weights must match the schedule length"));
        }
    }
    let mut out = PlotPoints { points: Vec::with_capacity(window.frames().len()), dropped: 0 };
    for &k in window.frames() {
        let t = mids[k];
        let c_p = at(cp, t)?;
        if !(c_p > eps_cp) {
            out.dropped += 1;
            continue;
        }
        let c_t = match tissue {
            PatlakTissue::Curve(curve) => at(curve, t)?,
            PatlakTissue::Frames { values, decay_weights } => values[k] / decay_weights[k],
        };
        out.points.push((at(&cum_cp, t)? / c_p, c_t / c_p));
    }
    out.require_two()
}

/// Ordinary least-squares line through the points: `(slope, intercept)`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("linear fit needs >= 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale = points.iter().map(|p| p.0 * p.0).sum::<f64>() / n;
    if !(sxx > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Fit("abscissa values have no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(Error::Fit("non-finite regression result".into()));
    }
    Ok((slope, intercept))
}

pub fn fit_logan(points: &PlotPoints) -> Result<LoganResult> {
    let (slope_k, intercept_b) = linear_fit(&points.points)?;
    Ok(LoganResult { slope_k, intercept_b })
}

pub fn fit_patlak(points: &PlotPoints) -> Result<PatlakResult> {
    let (ki, v0) = linear_fit(&points.points)?;
    Ok(PatlakResult { ki, v0 })
}

/// Slope and intercept images with a per-voxel failure mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricImages {
    pub slope: Image,
    pub intercept: Image,
    pub failed: Vec<bool>,
}

/// Per-voxel graphical analysis of the tissue response implied by each
/// voxel's kinetic parameters. Logan uses the dense tissue curve; Patlak uses
/// the frame values of the full forward model. Masked-out and failed voxels
/// are zero, and failures are flagged.
pub fn parametric_images(params: &ParamMap, model: &FrameModel, mode: GraphicalMode, window: &FitWindow, mask: Option<&[bool]>) -> Result<ParametricImages> {
    let n = params.width * params.height;
    if params.params.len() != n {
        return Err(Error::Shape("parameter map size does not match its dimensions".into()));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Shape("mask size does not match the parameter map".into()));
        }
    }
    let plasma = model.plasma();
    let results: Vec<Option<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if mask.is_some_and(|m| !m[i]) {
                return None;
            }
            voxel_parametric(&params.params[i], model, &plasma, mode, window).ok()
        })
        .collect();
    let mut slope = Image::zeros(params.width, params.height);
    let mut intercept = Image::zeros(params.width, params.height);
    let mut failed = vec![false; n];
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((s, b)) => {
                slope.data[i] = s;
                intercept.data[i] = b;
            }
            None => failed[i] = mask.is_none_or(|m| m[i]),
        }
    }
    Ok(ParametricImages { slope, intercept, failed })
}

/// The scalar path of [`parametric_images`] for one parameter set.
pub fn voxel_parametric(
    p: &crate::kinetics::KineticParams,
    model: &FrameModel,
    plasma: &TimeActivityCurve,
    mode: GraphicalMode,
    window: &FitWindow,
) -> Result<(f64, f64)> {
    let schedule = model.schedule();
    match mode {
        GraphicalMode::Logan => {
            let ct = model.tissue_curve(p)?;
            let pts = logan_points(&ct, plasma, window, schedule)?;
            linear_fit(&pts.points)
        }
        GraphicalMode::Patlak => {
            let frames = model.frames(p)?;
            let weights = model.decay_weights();
            let pts = patlak_points(PatlakTissue::Frames { values: &frames, decay_weights: &weights }, plasma, window, schedule)?;
            linear_fit(&pts.points)
        }
    }
}

/// Graphical fit of measured frame values. Frames are decay-corrected into
/// mean concentrations at the frame midpoints; Logan integrates the tissue
/// curve piecewise-linearly through those points from `(0, 0)`.
pub fn fit_frames(frames: &[f64], model: &FrameModel, mode: GraphicalMode, window: &FitWindow) -> Result<(f64, f64)> {
    let schedule = model.schedule();
    if frames.len() != schedule.len() {
        return Err(Error::Shape(format!("{} frame values for a {}-frame schedule", frames.len(), schedule.len())));
    }
    let weights = model.decay_weights();
    let plasma = model.plasma();
    match mode {
        GraphicalMode::Patlak => {
            let pts = patlak_points(PatlakTissue::Frames { values: frames, decay_weights: &weights }, &plasma, window, schedule)?;
            linear_fit(&pts.points)
        }
        GraphicalMode::Logan => {
            let mut times = vec![0.0];
            let mut values = vec![0.0];
            for (k, t) in schedule.midpoints().into_iter().enumerate() {
                times.push(t);
                values.push(frames[k] / weights[k]);
            }
            let ct = TimeActivityCurve::new(times, values)?;
            let pts = logan_points(&ct, &plasma, window, schedule)?;
            linear_fit(&pts.points)
        }
    }
}

/// [`fit_frames`] for every masked voxel of a dynamic image.
pub fn graphical_image(dynamic: &DynamicImage, model: &FrameModel, mode: GraphicalMode, window: &FitWindow, mask: Option<&[bool]>) -> Result<ParametricImages> {
    let n = dynamic.n_voxels();
    if mask.is_some_and(|m| m.len() != n) {
        return Err(Error::Shape("mask size does not match the image".into()));
    }
    let results: Vec<Option<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|v| {
            if mask.is_some_and(|m| !m[v]) {
                return None;
            }
            fit_frames(&dynamic.voxel_series(v), model, mode, window).ok()
        })
        .collect();
    let mut slope = Image::zeros(dynamic.width, dynamic.height);
    let mut intercept = Image::zeros(dynamic.width, dynamic.height);
    let mut failed = vec![false; n];
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some((s, b)) => {
                slope.data[i] = s;
                intercept.data[i] = b;
            }
            None => failed[i] = mask.is_none_or(|m| m[i]),
        }
    }
    Ok(ParametricImages { slope, intercept, failed })
}
