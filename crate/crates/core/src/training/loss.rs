use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::{FeatureMap, InnNetwork, PARAM_CHANNELS};

use super::config::{LossToggles, LossWeights};
use super::physics::{Physics, Sensitivities};
use super::sample::TrainingSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
    /// Voxel parameters that came out negative and were clamped to zero.
    pub clamped: usize,
}

impl LossReport {
    pub fn compose(l1: f64, l2: f64, l3: f64, l4: f64, w: &LossWeights) -> Self {
        Self { l1, l2, l3, l4, total: l1 + w.lambda1 * l2 + w.lambda2 * l3 + w.lambda3 * l4, clamped: 0 }
    }

    pub fn is_finite(&self) -> bool {
        [self.l1, self.l2, self.l3, self.l4, self.total].iter().all(|v| v.is_finite())
    }
}

/// Everything the objective needs besides the network and the sample.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub physics: &'a Physics,
    pub weights: LossWeights,
    pub toggles: LossToggles,
    pub aux_weight: f64,
    pub fd_step: f64,
    /// Dataset normalisation factor of frame values.
    pub scale: f64,
}

impl Objective<'_> {
    /// Loss terms only.
    pub fn evaluate(&self, net: &InnNetwork, sample: &TrainingSample) -> Result<LossReport> {
        self.run(net, sample, None)
    }

    /// Loss terms and the gradient of the total with respect to the flat
    /// network parameters.
    pub fn gradient(&self, net: &InnNetwork, sample: &TrainingSample) -> Result<(LossReport, Vec<f64>)> {
        let mut grad = vec![0.0; net.n_params()];
        let report = self.run(net, sample, Some(&mut grad))?;
        Ok((report, grad))
    }

    fn run(&self, net: &InnNetwork, sample: &TrainingSample, grad: Option<&mut Vec<f64>>) -> Result<LossReport> {
        let (h, w) = (sample.height, sample.width);
        let n = h * w;
        let c = net.channels();
        let np = PARAM_CHANNELS.len();
        let t = &self.toggles;
        let need_grad = grad.is_some();
        let mut g_theta = grad;

        let (l1, l3, l4, clamped, g_forward, tape) = if t.l1 || t.l3 || t.l4 {
            let (y, tape) = if need_grad { net.forward_tape(&sample.early).map(|(y, tp)| (y, Some(tp)))? } else { (net.forward(&sample.early)?, None) };
            let mut g_y = vec![0.0; c * n];

            let mut l1 = 0.0;
            if t.l1 {
                let (mut sp, mut sa) = (0.0, 0.0);
                for k in 0..np * n {
                    let d = y.data[k] - sample.target_params[k];
                    sp += d * d;
                    g_y[k] += 2.0 * d / (np * n) as f64;
                }
                let n_aux = (c - np) * n;
                for k in np * n..c * n {
                    sa += y.data[k] * y.data[k];
                    g_y[k] += 2.0 * self.aux_weight * y.data[k] / n_aux as f64;
                }
                l1 = sp / (np * n) as f64 + if n_aux > 0 { self.aux_weight * sa / n_aux as f64 } else { 0.0 };
            }

            let (mut l3, mut l4, mut clamped) = (0.0, 0.0, 0);
            if t.l3 || t.l4 {
                let raw: Vec<[f64; 4]> = (0..n).map(|v| [y.data[v], y.data[n + v], y.data[2 * n + v], y.data[3 * n + v]]).collect();
                clamped = raw.iter().flatten().filter(|v| **v < 0.0).count();
                let voxel = self.physics_terms(sample, &raw, need_grad)?;
                let n_frames = self.physics.n_frames();
                let w3 = if t.l3 { self.weights.lambda2 / (n_frames * n) as f64 } else { 0.0 };
                let w4 = if t.l4 { self.weights.lambda3 / (2 * n) as f64 } else { 0.0 };
                for (v, (e3, e4, g)) in voxel.into_iter().enumerate() {
                    l3 += e3;
                    l4 += e4;
                    for j in 0..4 {
                        if raw[v][j] >= 0.0 {
                            g_y[j * n + v] += w3 * g[0][j] + w4 * g[1][j];
                        }
                    }
                }
                l3 /= (n_frames * n) as f64;
                l4 /= (2 * n) as f64;
                if !t.l3 {
                    l3 = 0.0;
                }
                if !t.l4 {
                    l4 = 0.0;
                }
            }
            (l1, l3, l4, clamped, g_y, tape)
        } else {
            (0.0, 0.0, 0.0, 0, Vec::new(), None)
        };

        if let (Some(g), Some(tape)) = (g_theta.as_deref_mut(), tape.as_ref()) {
            net.backward_into(tape, &FeatureMap::from_vec(c, h, w, g_forward)?, g)?;
        }

        let mut l2 = 0.0;
        if t.l2 {
            let mut z = vec![0.0; c * n];
            z[..np * n].copy_from_slice(&sample.target_params);
            let z = FeatureMap::from_vec(c, h, w, z)?;
            let (x, tape) = if need_grad { net.inverse_tape(&z).map(|(x, tp)| (x, Some(tp)))? } else { (net.inverse(&z)?, None) };
            let m = (c * n) as f64;
            let mut g_x = vec![0.0; c * n];
            for k in 0..c * n {
                let d = x.data[k] - sample.early.data[k];
                l2 += d * d;
                g_x[k] = self.weights.lambda1 * 2.0 * d / m;
            }
            l2 /= m;
            if let (Some(g), Some(tape)) = (g_theta.as_deref_mut(), tape) {
                net.backward_into(&tape, &FeatureMap::from_vec(c, h, w, g_x)?, g)?;
            }
        }

        let mut report = LossReport::compose(l1, l2, l3, l4, &self.weights);
        report.clamped = clamped;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss { sample: sample.index });
        }
        Ok(report)
    }

    /// Per voxel: squared-error sums of L3 and L4 and their gradients with
    /// respect to the clamped rates (`[L3 grads, L4 grads]`).
    fn physics_terms(&self, sample: &TrainingSample, raw: &[[f64; 4]], need_grad: bool) -> Result<Vec<(f64, f64, [[f64; 4]; 2])>> {
        let n = raw.len();
        let n_frames = self.physics.n_frames();
        let inv_scale = 1.0 / self.scale;
        raw.par_iter()
            .enumerate()
            .map(|(v, r)| {
                let rates = r.map(|x| x.max(0.0));
                let sens: Sensitivities;
                let (frames, graphical) = if need_grad {
                    sens = self.physics.sensitivities(rates, self.fd_step)?;
                    (&sens.base.frames, sens.base.graphical)
                } else {
                    let resp = self.physics.respond(rates)?;
                    sens = Sensitivities { base: resp, frames: Default::default(), graphical: [(0.0, 0.0); 4] };
                    (&sens.base.frames, sens.base.graphical)
                };
                let mut g = [[0.0; 4]; 2];
                let mut e3 = 0.0;
                for k in 0..n_frames {
                    let d = frames[k] * inv_scale - sample.clean[k * n + v];
                    e3 += d * d;
                    if need_grad {
                        for j in 0..4 {
                            g[0][j] += 2.0 * d * sens.frames[j][k] * inv_scale;
                        }
                    }
                }
                let (s, b) = graphical.unwrap_or((0.0, 0.0));
                let (ds, db) = (s - sample.target_slope[v], b - sample.target_intercept[v]);
                let e4 = ds * ds + db * db;
                if need_grad {
                    for j in 0..4 {
                        g[1][j] = 2.0 * (ds * sens.graphical[j].0 + db * sens.graphical[j].1);
                    }
                }
                Ok((e3, e4, g))
            })
            .collect()
    }
}
