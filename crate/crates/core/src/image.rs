//! Image containers shared by the simulation, estimation and training code.
//! All buffers are row-major; dynamic images are frame-major `[t][y][x]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{FrameSchedule, KineticParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("{}x{} image needs {} values, got {}", width, height, width * height, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// `H×W×T` activity sequence with its acquisition schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicImage {
    pub width: usize,
    pub height: usize,
    pub schedule: FrameSchedule,
    data: Vec<f64>,
}

impl DynamicImage {
    pub fn zeros(width: usize, height: usize, schedule: FrameSchedule) -> Self {
        let n = width * height * schedule.len();
        Self { width, height, schedule, data: vec![0.0; n] }
    }

    pub fn from_vec(width: usize, height: usize, schedule: FrameSchedule, data: Vec<f64>) -> Result<Self> {
        let n = width * height * schedule.len();
        if data.len() != n {
            return Err(Error::Shape(format!("dynamic image needs {n} values, got {}", data.len())));
        }
        Ok(Self { width, height, schedule, data })
    }

    pub fn n_frames(&self) -> usize {
        self.schedule.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.n_voxels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.n_voxels();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn frame_image(&self, k: usize) -> Image {
        Image { width: self.width, height: self.height, data: self.frame(k).to_vec() }
    }

    /// Time series of one voxel across all frames.
    pub fn voxel_series(&self, voxel: usize) -> Vec<f64> {
        let n = self.n_voxels();
        (0..self.n_frames()).map(|k| self.data[k * n + voxel]).collect()
    }

    pub fn set_voxel_series(&mut self, voxel: usize, values: &[f64]) {
        let n = self.n_voxels();
        for (k, v) in values.iter().enumerate() {
            self.data[k * n + voxel] = *v;
        }
    }

    /// The first `n` frames as a new image.
    pub fn leading_frames(&self, n: usize) -> Result<DynamicImage> {
        if n == 0 || n > self.n_frames() {
            return Err(Error::Shape(format!("cannot take {n} of {} frames", self.n_frames())));
        }
        let schedule = FrameSchedule::new(self.schedule.frames()[..n].to_vec())?;
        let data = self.data[..n * self.n_voxels()].to_vec();
        Ok(DynamicImage { width: self.width, height: self.height, schedule, data })
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-voxel kinetic parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMap {
    pub width: usize,
    pub height: usize,
    pub params: Vec<KineticParams>,
}

impl ParamMap {
    pub fn uniform(width: usize, height: usize, p: KineticParams) -> Self {
        Self { width, height, params: vec![p; width * height] }
    }

    /// Channel images in the order `K1, k2, k3, k4, V_B`.
    pub fn channel(&self, index: usize) -> Image {
        let data = self
            .params
            .iter()
            .map(|p| match index {
                0 => p.k1,
                1 => p.k2,
                2 => p.k3,
                3 => p.k4,
                _ => p.vb,
            })
            .collect();
        Image { width: self.width, height: self.height, data }
    }

    pub fn from_channels(k1: &Image, k2: &Image, k3: &Image, k4: &Image, vb: &Image) -> Result<Self> {
        for im in [k2, k3, k4, vb] {
            if !im.same_shape(k1) {
                return Err(Error::Shape("parameter channel shapes differ".into()));
            }
        }
        let params = (0..k1.len())
            .map(|i| KineticParams::new(k1.data[i], k2.data[i], k3.data[i], k4.data[i], vb.data[i]))
            .collect();
        Ok(Self { width: k1.width, height: k1.height, params })
    }
}
