use crate::error::{invalid, Error, Result};
use crate::graphical::ParametricImages;
use crate::image::{DynamicImage, ParamMap};
use crate::inn::{FeatureMap, PARAM_CHANNELS};

/// One training pair, already normalised: frame values are divided by the
/// dataset scale, kinetic parameters are in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub index: usize,
    pub height: usize,
    pub width: usize,
    /// First frames, one channel each.
    pub early: FeatureMap,
    /// `(K1, k2, k3, k4)` channel-major.
    pub target_params: Vec<f64>,
    /// Every frame of the noise-free sequence, frame-major.
    pub clean: Vec<f64>,
    pub target_slope: Vec<f64>,
    pub target_intercept: Vec<f64>,
}

impl TrainingSample {
    pub fn new(
        index: usize,
        noisy: &DynamicImage,
        clean: &DynamicImage,
        params: &ParamMap,
        parametric: &ParametricImages,
        early_frames: usize,
        scale: f64,
    ) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("normalisation scale must be > 0, got {scale}")));
        }
        let (w, h) = (noisy.width, noisy.height);
        if clean.width != w || clean.height != h || params.width != w || params.height != h || parametric.slope.width != w || parametric.slope.height != h {
            return Err(Error::Shape(format!("sample {index}: image sizes differ")));
        }
        if early_frames == 0 || early_frames > noisy.n_frames() {
            return Err(invalid(format!("sample {index}: cannot take {early_frames} early frames")));
        }
        let early = noisy.leading_frames(early_frames)?;
        let early = FeatureMap::from_vec(early_frames, h, w, early.data().iter().map(|v| v / scale).collect())?;
        let mut target_params = Vec::with_capacity(PARAM_CHANNELS.len() * w * h);
        for c in 0..PARAM_CHANNELS.len() {
            target_params.extend(params.channel(c).data);
        }
        Ok(Self {
            index,
            height: h,
            width: w,
            early,
            target_params,
            clean: clean.data().iter().map(|v| v / scale).collect(),
            target_slope: parametric.slope.data.clone(),
            target_intercept: parametric.intercept.data.clone(),
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.height * self.width
    }
}

/// Dataset normalisation factor: the largest early-frame value over the
/// given noisy sequences (1 if they are all zero).
pub fn dataset_scale<'a>(noisy: impl IntoIterator<Item = &'a DynamicImage>, early_frames: usize) -> f64 {
    let mut m: f64 = 0.0;
    for img in noisy {
        let n = img.n_voxels() * early_frames.min(img.n_frames());
        m = img.data()[..n].iter().copied().fold(m, f64::max);
    }
    if m > 0.0 { m } else { 1.0 }
}
