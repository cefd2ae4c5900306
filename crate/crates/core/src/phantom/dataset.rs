use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{invalid, Result};
use crate::graphical::{voxel_parametric, FitWindow, GraphicalMode, ParametricImages};
use crate::image::{DynamicImage, Image, ParamMap};
use crate::kinetics::{FrameModel, KineticParams};

use super::labels::{make_phantom_with, LabelMap, PhantomKind};
use super::noise::add_poisson_with;
use super::osem::Osem;
use super::projector::Projector;
use super::randomize::randomize_params_with;
use super::synth::{fill_param_map, synthesize_with_model};

/// Everything needed to simulate samples, prepared once per dataset.
#[derive(Clone, Debug)]
pub struct SimulationSetup {
    pub size: usize,
    pub kind: PhantomKind,
    pub n_rois: usize,
    pub warp: f64,
    /// Fixed label map; when absent a phantom is generated per sample.
    pub label_map: Option<LabelMap>,
    pub roi_table: Vec<KineticParams>,
    pub cv: f64,
    pub noise_level: f64,
    pub base_counts: f64,
    pub osem: Osem,
    pub model: FrameModel,
    pub mode: GraphicalMode,
    pub window: FitWindow,
    pub projector: Projector,
}

impl SimulationSetup {
    pub fn from_config(cfg: &ExperimentConfig, label_map: Option<LabelMap>) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.frame_schedule()?;
        let tracer = cfg.tracer_def()?;
        let model = FrameModel::new(&cfg.input_function()?, &tracer, &schedule, cfg.simulation.steps_per_min)?;
        if let Some(map) = &label_map {
            if map.width != cfg.image_size || map.height != cfg.image_size {
                return Err(invalid(format!("label map is {}x{}, config expects {2}x{2}", map.width, map.height, cfg.image_size)));
            }
            if map.n_rois() > cfg.roi_means.rois.len() {
                return Err(invalid(format!("label map has {} ROIs but roi_means lists {}", map.n_rois(), cfg.roi_means.rois.len())));
            }
        }
        let n_rois = label_map.as_ref().map_or(cfg.phantom.n_rois, LabelMap::n_rois);
        Ok(Self {
            size: cfg.image_size,
            kind: cfg.phantom.kind,
            n_rois,
            warp: cfg.phantom.warp,
            label_map,
            roi_table: cfg.roi_means.rois[..n_rois].to_vec(),
            cv: cfg.simulation.cv,
            noise_level: cfg.simulation.noise_level,
            base_counts: cfg.simulation.base_counts,
            osem: Osem::new(cfg.simulation.osem_iterations, cfg.simulation.osem_subsets)?,
            mode: if tracer.reversible { GraphicalMode::Logan } else { GraphicalMode::Patlak },
            window: FitWindow::default_for(&schedule)?,
            model,
            projector: Projector::for_image(cfg.image_size)?,
        })
    }
}

/// One simulated study with its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub phantom_seed: u64,
    pub labels: LabelMap,
    pub roi_params: Vec<KineticParams>,
    /// OSEM reconstructions of the noisy sinograms.
    pub noisy: DynamicImage,
    /// Noise-free frame images.
    pub clean: DynamicImage,
    pub params: ParamMap,
    pub parametric: ParametricImages,
}

/// Independent random stream for sample `index` under a master seed.
pub fn sample_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

pub fn build_sample(setup: &SimulationSetup, master_seed: u64, index: usize) -> Result<Sample> {
    let mut rng = sample_rng(master_seed, index);
    let phantom_seed: u64 = rng.random();
    let labels = match &setup.label_map {
        Some(m) => m.clone(),
        None => make_phantom_with(setup.kind, setup.size, setup.n_rois, phantom_seed, setup.warp)?,
    };
    let roi_params = randomize_params_with(&setup.roi_table, setup.cv, &mut rng)?;
    let clean = synthesize_with_model(&labels, &roi_params, &setup.model)?;
    let params = fill_param_map(&labels, &roi_params)?;

    let mut noisy = DynamicImage::zeros(setup.size, setup.size, clean.schedule.clone());
    for k in 0..clean.n_frames() {
        let frame = clean.frame_image(k);
        let sino = setup.projector.forward(&frame)?;
        let measured = add_poisson_with(&sino, setup.noise_level, setup.base_counts, &mut rng)?;
        let recon = setup.osem.reconstruct(&setup.projector, &measured)?;
        noisy.frame_mut(k).copy_from_slice(&recon.data);
    }

    let parametric = roi_parametric(&labels, &roi_params, setup)?;
    Ok(Sample { index, phantom_seed, labels, roi_params, noisy, clean, params, parametric })
}

/// Samples `indices` of the dataset, in order; each draws from its own stream
/// so results do not depend on thread count or on which other samples are built.
pub fn build_dataset(setup: &SimulationSetup, master_seed: u64, indices: std::ops::Range<usize>) -> Result<Vec<Sample>> {
    indices.into_par_iter().map(|i| build_sample(setup, master_seed, i)).collect()
}

// Parameters are constant within an ROI, so one graphical fit per ROI suffices.
fn roi_parametric(labels: &LabelMap, roi_params: &[KineticParams], setup: &SimulationSetup) -> Result<ParametricImages> {
    let plasma = setup.model.plasma();
    let fits: Vec<Option<(f64, f64)>> = roi_params
        .iter()
        .map(|p| voxel_parametric(p, &setup.model, &plasma, setup.mode, &setup.window).ok())
        .collect();
    let mut slope = Image::zeros(labels.width, labels.height);
    let mut intercept = Image::zeros(labels.width, labels.height);
    let mut failed = vec![false; labels.labels().len()];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        match fits[l as usize - 1] {
            Some((s, b)) => {
                slope.data[i] = s;
                intercept.data[i] = b;
            }
            None => failed[i] = true,
        }
    }
    Ok(ParametricImages { slope, intercept, failed })
}
