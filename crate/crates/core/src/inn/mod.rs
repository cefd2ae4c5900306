//! Invertible network: blocks of 1×1 channel mixing followed by affine
//! coupling, with exact inverses and hand-written reverse-mode gradients for
//! both directions.

mod conv;
mod layers;
mod network;
mod subnet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use layers::{clamp_scale, CouplingLayer, MixingLayer, SubnetShape, TensorInfo};
pub use network::{Direction, InnNetwork, NetworkManifest, Tape, PARAM_CHANNELS};

/// Channel-major `[c][y][x]` stack of feature images.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} feature map needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        Self { channels: self.channels, height: self.height, width: self.width, data }
    }

    pub(crate) fn expect_channels(&self, c: usize) -> Result<()> {
        if self.channels != c {
            return Err(Error::Shape(format!("expected {c} channels, got {}", self.channels)));
        }
        if self.data.len() != self.channels * self.pixels() {
            return Err(Error::Shape("feature map buffer does not match its dimensions".into()));
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature map contains non-finite values"));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_layers")]
    pub subnet_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    /// σ in the `σ·tanh(z/σ)` bound on the log-scale.
    #[serde(default = "default_clamp")]
    pub clamp: f64,
}

fn default_blocks() -> usize {
    6
}
fn default_layers() -> usize {
    4
}
fn default_hidden() -> usize {
    32
}
fn default_slope() -> f64 {
    0.01
}
fn default_clamp() -> f64 {
    2.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            blocks: default_blocks(),
            subnet_layers: default_layers(),
            hidden: default_hidden(),
            leaky_slope: default_slope(),
            clamp: default_clamp(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if channels < PARAM_CHANNELS.len() {
            return Err(invalid(format!("network needs at least {} channels, got {channels}", PARAM_CHANNELS.len())));
        }
        if self.subnet_layers == 0 || self.hidden == 0 {
            return Err(invalid("network: subnet_layers and hidden must be >= 1"));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(invalid("network: leaky_slope must be finite and >= 0"));
        }
        if !(self.clamp.is_finite() && self.clamp > 0.0) {
            return Err(invalid("network: clamp must be > 0"));
        }
        Ok(())
    }

    pub fn subnet_shape(&self) -> SubnetShape {
        SubnetShape { layers: self.subnet_layers, hidden: self.hidden, leaky_slope: self.leaky_slope }
    }
}
