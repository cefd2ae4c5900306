use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{DynamicImage, ParamMap};
use crate::inn::{FeatureMap, InnNetwork, PARAM_CHANNELS};
use crate::kinetics::KineticParams;

use super::physics::Physics;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Clamped `(K1, k2, k3, k4)` with the model's blood fraction.
    pub params: ParamMap,
    /// Every frame of the schedule rebuilt from `params`.
    pub frames: DynamicImage,
    /// Parameter values that were negative before clamping.
    pub clamped: usize,
}

/// Forward pass on the early frames (physical units, divided by `scale`
/// before entering the network), then the kinetic model for all frames.
pub fn predict(net: &InnNetwork, physics: &Physics, early: &DynamicImage, scale: f64) -> Result<Prediction> {
    if early.n_frames() != net.channels() {
        return Err(Error::Shape(format!("network expects {} early frames, got {}", net.channels(), early.n_frames())));
    }
    let (h, w) = (early.height, early.width);
    let n = h * w;
    let x = FeatureMap::from_vec(net.channels(), h, w, early.data().iter().map(|v| v / scale).collect())?;
    let y = net.forward(&x)?;
    let raw: Vec<[f64; 4]> = (0..n).map(|v| PARAM_CHANNELS.map(|c| y.data[c * n + v])).collect();
    let clamped = raw.iter().flatten().filter(|v| **v < 0.0).count();
    let rates: Vec<[f64; 4]> = raw.iter().map(|r| r.map(|v| v.max(0.0))).collect();
    let series: Vec<Vec<f64>> = rates.par_iter().map(|&r| physics.frames(r)).collect::<Result<_>>()?;
    let mut frames = DynamicImage::zeros(w, h, physics.model().schedule().clone());
    for (v, s) in series.iter().enumerate() {
        frames.set_voxel_series(v, s);
    }
    let vb = physics.blood_fraction();
    let params = ParamMap { width: w, height: h, params: rates.iter().map(|r| KineticParams::new(r[0], r[1], r[2], r[3], vb)).collect() };
    Ok(Prediction { params, frames, clamped })
}
