use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::graphical::GraphicalMode;
use crate::inn::{InnNetwork, NetworkManifest};
use crate::io::ArrayFile;

use super::adam::Adam;
use super::trainer::TrainState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub network: NetworkManifest,
    pub epoch: usize,
    pub step: usize,
    /// Frame values are divided by this before entering the network.
    pub scale: f64,
    pub blood_fraction: f64,
    pub mode: GraphicalMode,
    pub early_frames: usize,
    pub n_frames: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_validation: Option<f64>,
    /// Scale-exponent bound applied in every coupling layer.
    pub scale_clamp: String,
}

/// Directory with `manifest.json`, `params.pkarr` and `optimizer.pkarr`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: Vec<f64>,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<InnNetwork> {
        InnNetwork::from_manifest(&self.manifest.network, self.params.clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        let tensors = serde_json::to_value(&self.manifest.network.tensors)?;
        ArrayFile::from_f64(vec![self.params.len()], &self.params, json!({ "tensors": tensors })).and_then(|a| a.write(dir.join("params.pkarr")))?;
        if let Some(adam) = &self.adam {
            let mut mv = adam.m.clone();
            mv.extend_from_slice(&adam.v);
            let meta = json!({ "t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "epsilon": adam.epsilon });
            ArrayFile::from_f64(vec![2, adam.m.len()], &mv, meta)?.write(dir.join("optimizer.pkarr"))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| Error::Format(format!("cannot read checkpoint manifest in {}: {e}", dir.display())))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let params = ArrayFile::read(dir.join("params.pkarr"))?.to_f64();
        let opt_path = dir.join("optimizer.pkarr");
        let adam = if opt_path.exists() {
            let a = ArrayFile::read(opt_path)?;
            let n = params.len();
            if a.dims != [2, n] {
                return Err(Error::Format("optimizer state does not match the parameter count".into()));
            }
            let get = |k: &str| a.meta.get(k).and_then(|v| v.as_f64()).ok_or_else(|| Error::Format(format!("optimizer meta lacks {k}")));
            let v = a.to_f64();
            Some(Adam { beta1: get("beta1")?, beta2: get("beta2")?, epsilon: get("epsilon")?, t: get("t")? as u64, m: v[..n].to_vec(), v: v[n..].to_vec() })
        } else {
            None
        };
        let ck = Self { manifest, params, adam };
        ck.network()?;
        Ok(ck)
    }

    /// Restores a training state (fresh optimiser if none was saved).
    pub fn into_state(self, beta1: f64, beta2: f64, epsilon: f64) -> Result<TrainState> {
        let net = self.network()?;
        let adam = self.adam.unwrap_or_else(|| Adam::new(net.n_params(), beta1, beta2, epsilon));
        Ok(TrainState { net, adam, epoch: self.manifest.epoch, step: self.manifest.step, best: None })
    }
}
