//! Dataset directories: `sample_%04d/` with eight array files (noisy and
//! noise-free sequences, four rate-constant images, slope and intercept
//! images) and a `sample.json` holding seeds, the ROI table and labels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graphical::ParametricImages;
use crate::io::ArrayFile;

use super::dataset::Sample;
use super::labels::LabelMap;
use super::synth::fill_param_map;
use crate::kinetics::KineticParams;

pub const ARRAY_FILES: [&str; 8] = ["noisy", "clean", "k1", "k2", "k3", "k4", "slope", "intercept"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SampleRecord {
    index: usize,
    phantom_seed: u64,
    width: usize,
    height: usize,
    roi_params: Vec<KineticParams>,
    /// Row-major label ids, 0 = background.
    labels: Vec<u16>,
    /// Largest value among the sample's first `early_frames` noisy frames.
    early_max: f64,
    early_frames: usize,
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:04}"))
}

pub fn write_sample(root: &Path, sample: &Sample, early_frames: usize) -> Result<PathBuf> {
    let dir = sample_dir(root, sample.index);
    std::fs::create_dir_all(&dir)?;
    let meta = |kind: &str| json!({ "sample": sample.index, "kind": kind });
    ArrayFile::from_dynamic(&sample.noisy, meta("noisy"))?.write(dir.join("noisy.pkarr"))?;
    ArrayFile::from_dynamic(&sample.clean, meta("clean"))?.write(dir.join("clean.pkarr"))?;
    for (c, name) in ["k1", "k2", "k3", "k4"].iter().enumerate() {
        ArrayFile::from_image(&sample.params.channel(c), meta(name))?.write(dir.join(format!("{name}.pkarr")))?;
    }
    ArrayFile::from_image(&sample.parametric.slope, meta("slope"))?.write(dir.join("slope.pkarr"))?;
    ArrayFile::from_image(&sample.parametric.intercept, meta("intercept"))?.write(dir.join("intercept.pkarr"))?;
    let n = sample.noisy.n_voxels() * early_frames.min(sample.noisy.n_frames());
    let record = SampleRecord {
        index: sample.index,
        phantom_seed: sample.phantom_seed,
        width: sample.labels.width,
        height: sample.labels.height,
        roi_params: sample.roi_params.clone(),
        labels: sample.labels.labels().to_vec(),
        early_max: sample.noisy.data()[..n].iter().copied().fold(0.0, f64::max),
        early_frames,
    };
    std::fs::write(dir.join("sample.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(dir)
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let text = std::fs::read_to_string(dir.join("sample.json")).map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
    let record: SampleRecord = serde_json::from_str(&text)?;
    let labels = LabelMap::new(record.width, record.height, record.labels)?;
    let read = |name: &str| ArrayFile::read(dir.join(format!("{name}.pkarr")));
    let noisy = read("noisy")?.to_dynamic(None)?;
    let clean = read("clean")?.to_dynamic(None)?;
    let params = fill_param_map(&labels, &record.roi_params)?;
    let slope = read("slope")?.to_image()?;
    let intercept = read("intercept")?.to_image()?;
    if !slope.same_shape(&intercept) || slope.width != labels.width || noisy.width != labels.width || noisy.height != labels.height {
        return Err(Error::Shape(format!("{}: arrays disagree in size", dir.display())));
    }
    let failed = vec![false; slope.len()];
    Ok(Sample {
        index: record.index,
        phantom_seed: record.phantom_seed,
        labels,
        roi_params: record.roi_params,
        noisy,
        clean,
        params,
        parametric: ParametricImages { slope, intercept, failed },
    })
}

/// Sorted `sample_*` directories under `root`.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("sample_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_meta(root: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(root.join("meta.json")).map_err(|e| Error::Format(format!("{}: {e}", root.display())))?;
    Ok(serde_json::from_str(&text)?)
}
