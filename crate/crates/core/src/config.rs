//! Experiment configuration: a versioned JSON document with every knob of a
//! simulation/training run. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::NetworkConfig;
use crate::kinetics::{FrameSchedule, InputCurve, InputFunction, KineticParams, Tracer};
use crate::phantom::PhantomKind;
use crate::training::{LossWeights, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerConfig {
    pub name: String,
    pub half_life_min: f64,
    pub reversible: bool,
    pub input_function: InputCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whole_blood: Option<InputCurve>,
    #[serde(default)]
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub n_rois: usize,
    /// Optional external label map (array file, dims `[H, W]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<String>,
    /// Maximum displacement of the seed-driven warp, in voxels at 128×128.
    #[serde(default = "default_warp")]
    pub warp: f64,
}

fn default_warp() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiMeans {
    #[serde(default)]
    pub source: String,
    pub rois: Vec<KineticParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_cv")]
    pub cv: f64,
    #[serde(default = "default_noise")]
    pub noise_level: f64,
    #[serde(default = "default_counts")]
    pub base_counts: f64,
    #[serde(default = "default_iterations")]
    pub osem_iterations: usize,
    #[serde(default = "default_subsets")]
    pub osem_subsets: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_steps")]
    pub steps_per_min: usize,
}

fn default_cv() -> f64 {
    0.2
}
fn default_noise() -> f64 {
    0.2
}
fn default_counts() -> f64 {
    1e6
}
fn default_iterations() -> usize {
    6
}
fn default_subsets() -> usize {
    5
}
fn default_steps() -> usize {
    crate::kinetics::DEFAULT_STEPS_PER_MIN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default = "default_fit_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_fit_tolerance")]
    pub tolerance: f64,
    /// Upper bounds are this multiple of the largest ROI mean per parameter.
    #[serde(default = "default_bound_factor")]
    pub bound_factor: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { max_iterations: default_fit_iterations(), tolerance: default_fit_tolerance(), bound_factor: default_bound_factor() }
    }
}

fn default_fit_iterations() -> usize {
    200
}
fn default_fit_tolerance() -> f64 {
    1e-12
}
fn default_bound_factor() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub image_size: usize,
    /// `(frame count, seconds per frame)` groups.
    pub schedule: Vec<(usize, f64)>,
    pub early_frames: usize,
    pub tracer: TracerConfig,
    pub phantom: PhantomConfig,
    pub roi_means: RoiMeans,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub fit: FitSettings,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.image_size < 16 {
            return bad(format!("image_size must be >= 16, got {}", self.image_size));
        }
        let schedule = self.frame_schedule()?;
        if self.early_frames == 0 || self.early_frames > schedule.len() {
            return bad(format!("early_frames must be in 1..={}, got {}", schedule.len(), self.early_frames));
        }
        self.tracer_def()?;
        self.input_function()?;
        if self.phantom.n_rois == 0 {
            return bad("phantom.n_rois must be >= 1".into());
        }
        if self.roi_means.rois.len() < self.phantom.n_rois {
            return bad(format!(
                "roi_means lists {} ROIs but the phantom has {}",
                self.roi_means.rois.len(),
                self.phantom.n_rois
            ));
        }
        for (i, p) in self.roi_means.rois.iter().enumerate() {
            p.validate().map_err(|e| Error::Config(format!("roi_means.rois[{i}]: {e}")))?;
            if !self.tracer.reversible && p.k4 != 0.0 {
                return bad(format!("roi_means.rois[{i}]: irreversible tracer requires k4 = 0"));
            }
        }
        let sim = &self.simulation;
        if !(sim.cv >= 0.0) || !(sim.noise_level > 0.0) || !(sim.base_counts > 0.0) {
            return bad("simulation: cv >= 0, noise_level > 0 and base_counts > 0 required".into());
        }
        if sim.osem_iterations == 0 || sim.osem_subsets == 0 || sim.steps_per_min == 0 {
            return bad("simulation: osem_iterations, osem_subsets and steps_per_min must be >= 1".into());
        }
        self.network.validate(self.early_frames).map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss_weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.fit.tolerance > 0.0) || self.fit.max_iterations == 0 || !(self.fit.bound_factor > 0.0) {
            return bad("fit: tolerance > 0, max_iterations >= 1 and bound_factor > 0 required".into());
        }
        Ok(())
    }

    pub fn frame_schedule(&self) -> Result<FrameSchedule> {
        FrameSchedule::from_groups(&self.schedule).map_err(|e| Error::Config(format!("schedule: {e}")))
    }

    pub fn tracer_def(&self) -> Result<Tracer> {
        Tracer::from_half_life(self.tracer.name.clone(), self.tracer.half_life_min, self.tracer.reversible)
            .map_err(|e| Error::Config(format!("tracer: {e}")))
    }

    pub fn input_function(&self) -> Result<InputFunction> {
        InputFunction::new(self.tracer.input_function.clone(), self.tracer.whole_blood.clone())
            .map_err(|e| Error::Config(format!("tracer.input_function: {e}")))
    }

    /// ROI means for the configured number of ROIs.
    pub fn roi_table(&self) -> Vec<KineticParams> {
        self.roi_means.rois[..self.phantom.n_rois].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TASK1: &str = include_str!("../../../configs/task1.json");

    #[test]
    fn presets_parse() {
        for text in [
            TASK1,
            include_str!("../../../configs/task2.json"),
            include_str!("../../../configs/task3.json"),
            include_str!("../../../configs/desk.json"),
        ] {
            let cfg = ExperimentConfig::from_json(text).unwrap();
            assert_eq!(cfg.frame_schedule().unwrap().len(), 18);
            assert_eq!(cfg.early_frames, 12);
            assert_eq!(cfg.simulation.noise_level, 0.2);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(TASK1).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(TASK1).unwrap();
        v["simulation"]["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn version_and_ranges_are_checked() {
        let mut v: serde_json::Value = serde_json::from_str(TASK1).unwrap();
        v["version"] = serde_json::json!(99);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(TASK1).unwrap();
        v["roi_means"]["rois"][0]["k4"] = serde_json::json!(0.1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(TASK1).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
