use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inn::InnNetwork;

use super::adam::Adam;
use super::config::TrainConfig;
use super::loss::{LossReport, Objective};
use super::sample::TrainingSample;

/// One row of the loss log, written after each optimiser step. Losses are
/// those of the step's sample before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "L3")]
    pub l3: f64,
    #[serde(rename = "L4")]
    pub l4: f64,
    pub total: f64,
    pub step_size: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_total: f64,
    pub validation_total: Option<f64>,
}

/// Network, optimiser and progress counters; everything a resumed run needs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: InnNetwork,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser steps.
    pub step: usize,
    pub best: Option<BestEpoch>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestEpoch {
    pub epoch: usize,
    pub validation_total: f64,
    pub params: Vec<f64>,
}

impl TrainState {
    pub fn new(net: InnNetwork, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(net.n_params(), cfg.beta1, cfg.beta2, cfg.epsilon);
        Self { net, adam, epoch: 0, step: 0, best: None }
    }

    /// Runs `epochs` more epochs. Each epoch visits the training samples in
    /// a seed-determined order with one step per sample, then scores the
    /// validation set and remembers the best-scoring parameters.
    pub fn train(
        &mut self,
        objective: &Objective<'_>,
        cfg: &TrainConfig,
        seed: u64,
        train: &[TrainingSample],
        validation: &[TrainingSample],
        epochs: usize,
        mut on_step: impl FnMut(&LogRow),
        mut on_epoch: impl FnMut(&EpochSummary),
    ) -> Result<Vec<EpochSummary>> {
        if train.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let mut summaries = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = self.epoch + 1;
            let lr = cfg.step_size_at(epoch);
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for &i in &order {
                let (report, grad) = objective.gradient(&self.net, &train[i])?;
                let adam = &mut self.adam;
                self.net.update(|theta| adam.step(theta, &grad, lr)).map_err(|e| match e {
                    Error::InvalidInput(m) => Error::InvalidInput(format!("sample {}: {m}", train[i].index)),
                    other => other,
                })?;
                self.step += 1;
                sum += report.total;
                on_step(&row(epoch, self.step, &report, lr));
            }
            self.epoch = epoch;
            let validation_total = if validation.is_empty() { None } else { Some(mean_total(objective, &self.net, validation)?) };
            if let Some(v) = validation_total {
                if self.best.as_ref().is_none_or(|b| v < b.validation_total) {
                    self.best = Some(BestEpoch { epoch, validation_total: v, params: self.net.params().to_vec() });
                }
            }
            let summary = EpochSummary { epoch, train_total: sum / train.len() as f64, validation_total };
            on_epoch(&summary);
            summaries.push(summary);
        }
        Ok(summaries)
    }
}

fn row(epoch: usize, step: usize, r: &LossReport, lr: f64) -> LogRow {
    LogRow { epoch, step, l1: r.l1, l2: r.l2, l3: r.l3, l4: r.l4, total: r.total, step_size: lr }
}

pub fn mean_total(objective: &Objective<'_>, net: &InnNetwork, samples: &[TrainingSample]) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        sum += objective.evaluate(net, s)?.total;
    }
    Ok(sum / samples.len().max(1) as f64)
}
