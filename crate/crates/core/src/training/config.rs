use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Weights of the backward, dynamic-image and parametric-image terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.2, lambda2: 1.0, lambda3: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which loss terms take part (ablation switches).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossToggles {
    pub l1: bool,
    pub l2: bool,
    pub l3: bool,
    pub l4: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { l1: true, l2: true, l3: true, l4: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_period")]
    pub halving_period: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub losses: LossToggles,
    /// Weight of the auxiliary-channel term inside L1.
    #[serde(default = "default_aux")]
    pub aux_weight: f64,
    /// Relative step of the finite-difference physics sensitivities.
    #[serde(default = "default_fd")]
    pub fd_step: f64,
}

fn default_epochs() -> usize {
    300
}
fn default_batch() -> usize {
    1
}
fn default_step() -> f64 {
    1e-4
}
fn default_period() -> usize {
    50
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_aux() -> f64 {
    1.0
}
fn default_fd() -> f64 {
    1e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            step_size: default_step(),
            halving_period: default_period(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            losses: LossToggles::default(),
            aux_weight: default_aux(),
            fd_step: default_fd(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("train.epochs must be >= 1"));
        }
        if self.batch_size != 1 {
            return Err(invalid("train.batch_size: only 1 is supported"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("train.step_size must be > 0"));
        }
        if self.halving_period == 0 {
            return Err(invalid("train.halving_period must be >= 1"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) || !(self.epsilon > 0.0) {
            return Err(invalid("train: betas must be in [0, 1) and epsilon > 0"));
        }
        if !(self.aux_weight.is_finite() && self.aux_weight >= 0.0) || !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return Err(invalid("train: aux_weight >= 0 and fd_step in (0, 0.1) required"));
        }
        Ok(())
    }

    /// Step size for a 1-based epoch: halved every `halving_period` epochs.
    pub fn step_size_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.halving_period;
        self.step_size * 0.5f64.powi(halvings.min(1000) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_period() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.step_size_at(1), 1e-4);
        assert_eq!(cfg.step_size_at(50), 1e-4);
        assert_eq!(cfg.step_size_at(51), 5e-5);
        assert_eq!(cfg.step_size_at(101), 2.5e-5);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda1: -1.0, ..Default::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
