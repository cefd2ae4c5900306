//! The fixed (non-learned) maps from kinetic parameters to frames and to
//! graphical-analysis slope/intercept, with finite-difference sensitivities.

use crate::error::Result;
use crate::graphical::{linear_fit, FitWindow, GraphicalMode, GUARD};
use crate::kinetics::{interpolate, running_integral, FrameModel, KineticParams};

/// Floor for the finite-difference step of parameters near zero.
const FD_FLOOR: f64 = 1e-2;

/// Frames and graphical fit for one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelResponse {
    pub frames: Vec<f64>,
    /// `(slope, intercept)`, or `None` when the plot is degenerate.
    pub graphical: Option<(f64, f64)>,
}

/// Derivatives of [`VoxelResponse`] with respect to `(K1, k2, k3, k4)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivities {
    pub base: VoxelResponse,
    pub frames: [Vec<f64>; 4],
    /// Zero where the fit failed at the base point or either probe.
    pub graphical: [(f64, f64); 4],
}

#[derive(Clone, Debug)]
pub struct Physics {
    model: FrameModel,
    mode: GraphicalMode,
    window: FitWindow,
    vb: f64,
    decay_weights: Vec<f64>,
    mids: Vec<f64>,
    // plasma value and integral at each windowed midpoint
    cp_mid: Vec<f64>,
    cum_cp_mid: Vec<f64>,
    cp_guard: f64,
}

impl Physics {
    /// `vb` is the blood fraction used for every voxel.
    pub fn new(model: FrameModel, mode: GraphicalMode, window: FitWindow, vb: f64) -> Result<Self> {
        KineticParams::new(0.0, 0.0, 0.0, 0.0, vb).validate()?;
        let mids = model.schedule().midpoints();
        let grid = model.grid().to_vec();
        let plasma = model.plasma();
        let lookup = |values: &[f64], t: f64| interpolate(&grid, values, t).unwrap_or(0.0);
        let cp_mid = window.frames().iter().map(|&k| lookup(&plasma.values, mids[k])).collect();
        let cum_cp_mid = window.frames().iter().map(|&k| lookup(model.plasma_integral(), mids[k])).collect();
        let cp_guard = GUARD * plasma.values.iter().copied().fold(0.0, f64::max);
        let decay_weights = model.decay_weights();
        Ok(Self { model, mode, window, vb, decay_weights, mids, cp_mid, cum_cp_mid, cp_guard })
    }

    pub fn model(&self) -> &FrameModel {
        &self.model
    }

    pub fn mode(&self) -> GraphicalMode {
        self.mode
    }

    pub fn window(&self) -> &FitWindow {
        &self.window
    }

    pub fn blood_fraction(&self) -> f64 {
        self.vb
    }

    pub fn n_frames(&self) -> usize {
        self.model.schedule().len()
    }

    pub fn params(&self, rates: [f64; 4]) -> KineticParams {
        KineticParams::new(rates[0], rates[1], rates[2], rates[3], self.vb)
    }

    /// Frames only (the prediction path).
    pub fn frames(&self, rates: [f64; 4]) -> Result<Vec<f64>> {
        self.model.frames(&self.params(rates))
    }

    pub fn respond(&self, rates: [f64; 4]) -> Result<VoxelResponse> {
        let p = self.params(rates);
        let ct = self.model.tissue(&p)?;
        let frames = self.model.frames_from_tissue(&ct, p.vb)?;
        let graphical = match self.mode {
            GraphicalMode::Patlak => self.patlak(&frames),
            GraphicalMode::Logan => self.logan(&ct),
        };
        Ok(VoxelResponse { frames, graphical })
    }

    fn patlak(&self, frames: &[f64]) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .window
            .frames()
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.cp_mid[i] > self.cp_guard)
            .map(|(i, &k)| (self.cum_cp_mid[i] / self.cp_mid[i], frames[k] / self.decay_weights[k] / self.cp_mid[i]))
            .collect();
        linear_fit(&pts).ok()
    }

    fn logan(&self, ct: &[f64]) -> Option<(f64, f64)> {
        let grid = self.model.grid();
        let guard = GUARD * ct.iter().copied().fold(0.0, f64::max);
        let cum = running_integral(grid, ct);
        let mut pts = Vec::with_capacity(self.window.frames().len());
        for (i, &k) in self.window.frames().iter().enumerate() {
            let t = self.mids[k];
            let c = interpolate(grid, ct, t)?;
            if !(c > guard && self.cp_mid[i] > self.cp_guard) {
                continue;
            }
            pts.push((self.cum_cp_mid[i] / c, interpolate(grid, &cum, t)? / c));
        }
        linear_fit(&pts).ok()
    }

    /// Central differences with step `rel·p`; a forward difference is used
    /// when the central probe would leave the nonnegative domain.
    pub fn sensitivities(&self, rates: [f64; 4], rel: f64) -> Result<Sensitivities> {
        let base = self.respond(rates)?;
        let n = base.frames.len();
        let mut frames: [Vec<f64>; 4] = Default::default();
        let mut graphical = [(0.0, 0.0); 4];
        for j in 0..4 {
            let h = rel * rates[j].max(FD_FLOOR);
            let (lo, width) = if rates[j] - h >= 0.0 { (rates[j] - h, 2.0 * h) } else { (rates[j], h) };
            let mut up = rates;
            up[j] = lo + width;
            let hi_resp = self.respond(up)?;
            let lo_resp = if lo == rates[j] {
                base.clone()
            } else {
                let mut down = rates;
                down[j] = lo;
                self.respond(down)?
            };
            frames[j] = (0..n).map(|k| (hi_resp.frames[k] - lo_resp.frames[k]) / width).collect();
            if let (Some(_), Some(a), Some(b)) = (base.graphical, hi_resp.graphical, lo_resp.graphical) {
                graphical[j] = ((a.0 - b.0) / width, (a.1 - b.1) / width);
            }
        }
        Ok(Sensitivities { base, frames, graphical })
    }
}
