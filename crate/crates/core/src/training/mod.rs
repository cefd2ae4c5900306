//! Multi-term training objective, optimiser loop, checkpoints and the
//! prediction path.
//!
//! The total loss is `L1 + λ1·L2 + λ2·L3 + λ3·L4`: the forward parameter
//! loss (plus auxiliary channels pushed to zero), the inverse frame loss,
//! the loss of all frames rebuilt from the predicted parameters, and the
//! loss of the graphical slope/intercept images of those parameters.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod physics;
mod predict;
mod sample;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
pub use config::{LossToggles, LossWeights, TrainConfig};
pub use loss::{LossReport, Objective};
pub use physics::{Physics, Sensitivities, VoxelResponse};
pub use predict::{predict, Prediction};
pub use sample::{dataset_scale, TrainingSample};
pub use trainer::{mean_total, BestEpoch, EpochSummary, LogRow, TrainState};
