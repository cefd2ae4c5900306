//! Simulation of dynamic PET studies: procedural label phantoms, per-ROI
//! parameter randomisation, noise-free frame synthesis, parallel-beam
//! projection, Poisson noise and OSEM reconstruction.

mod dataset;
mod labels;
mod noise;
mod osem;
mod projector;
mod randomize;
mod store;
mod synth;

pub use dataset::{build_dataset, build_sample, sample_rng, Sample, SimulationSetup};
pub use labels::{make_phantom, make_phantom_with, LabelMap, PhantomKind};
pub use noise::{add_poisson, add_poisson_with};
pub use osem::{osem_reconstruct, poisson_log_likelihood, Osem};
pub use projector::{forward_project, ProjectionGeometry, Projector, Sinogram};
pub use store::{list_samples, read_meta, read_sample, sample_dir, write_sample, ARRAY_FILES};
pub use randomize::{randomize_params, randomize_params_with};
pub use synth::{fill_param_map, synthesize_dynamic, synthesize_with_model};
