use std::fs::OpenOptions;
use std::path::Path;
use std::time::Instant;

use log::info;
use petkin_core::config::ExperimentConfig;
use petkin_core::graphical::{FitWindow, GraphicalMode};
use petkin_core::inn::InnNetwork;
use petkin_core::kinetics::FrameModel;
use petkin_core::phantom::{list_samples, read_meta, read_sample, Sample};
use petkin_core::training::{dataset_scale, Checkpoint, CheckpointManifest, Objective, Physics, TrainState, TrainingSample, CHECKPOINT_VERSION};
use rayon::prelude::*;
use serde_json::json;

use crate::{data_err, load_config, mean_blood_fraction, out_dir, write_json, CmdResult, Common, Failure, TrainArgs};

pub fn run(common: &Common, args: &TrainArgs) -> CmdResult {
    let cfg = load_config(common)?;
    let out = out_dir(common, Some(&cfg), "train")?;
    let (train, validation) = load_dataset(&args.dataset, &cfg)?;
    let resume = match &args.resume {
        Some(dir) => Some(Checkpoint::load(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))?),
        None => None,
    };

    // Best epoch of earlier runs; its parameters live in the sibling `best` checkpoint.
    let prior_best = resume.as_ref().and_then(|ck| ck.manifest.best_epoch.zip(ck.manifest.best_validation));
    let scale = match &resume {
        Some(ck) => ck.manifest.scale,
        None => dataset_scale(train.iter().map(|s| &s.noisy), cfg.early_frames),
    };
    let vb = resume.as_ref().map_or_else(|| mean_blood_fraction(&cfg), |ck| ck.manifest.blood_fraction);
    let physics = physics_for(&cfg, vb)?;
    let to_training = |s: &[Sample]| -> CmdResult<Vec<TrainingSample>> {
        s.iter()
            .map(|s| TrainingSample::new(s.index, &s.noisy, &s.clean, &s.params, &s.parametric, cfg.early_frames, scale).map_err(Failure::from))
            .collect()
    };
    let train_set = to_training(&train)?;
    let validation_set = to_training(&validation)?;
    drop((train, validation));

    let t = &cfg.train;
    let mut state = match resume {
        Some(ck) => {
            if ck.manifest.network.channels != cfg.early_frames || ck.manifest.mode != physics.mode() {
                return Err(data_err("checkpoint does not match the configuration"));
            }
            ck.into_state(t.beta1, t.beta2, t.epsilon)?
        }
        None => TrainState::new(InnNetwork::new(&cfg.network, cfg.early_frames, cfg.seed)?, t),
    };
    let epochs = args.epochs.unwrap_or(t.epochs.saturating_sub(state.epoch));
    let objective = Objective { physics: &physics, weights: cfg.loss_weights, toggles: t.losses, aux_weight: t.aux_weight, fd_step: t.fd_step, scale };

    let loss_path = out.join("loss.csv");
    let append = args.resume.is_some() && loss_path.exists();
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(&loss_path)?;
    let mut loss_csv = csv::WriterBuilder::new().has_headers(!append).from_writer(file);
    let epoch_path = out.join("epochs.csv");
    let append_epochs = args.resume.is_some() && epoch_path.exists();
    let file = OpenOptions::new().create(true).write(true).append(append_epochs).truncate(!append_epochs).open(&epoch_path)?;
    let mut epoch_csv = csv::WriterBuilder::new().has_headers(!append_epochs).from_writer(file);

    info!(
        "training on {} samples ({} validation), scale {scale:.6e}, epochs {}..={}",
        train_set.len(),
        validation_set.len(),
        state.epoch + 1,
        state.epoch + epochs
    );
    let started = Instant::now();
    let mut io_error: Option<Failure> = None;
    let mut checkpoint_error: Option<Failure> = None;
    let first_epoch = state.epoch + 1;
    let mut summaries = Vec::new();
    {
        let mut on_step = |row: &petkin_core::training::LogRow| {
            if let Err(e) = loss_csv.serialize(row) {
                io_error.get_or_insert(e.into());
            }
        };
        let on_epoch = |s: &petkin_core::training::EpochSummary| {
            info!(
                "epoch {} train {:.6e} validation {} ({:.1}s)",
                s.epoch,
                s.train_total,
                s.validation_total.map_or("-".into(), |v| format!("{v:.6e}")),
                started.elapsed().as_secs_f64()
            );
            if let Err(e) = epoch_csv.serialize(s) {
                checkpoint_error.get_or_insert(e.into());
            }
            summaries.push(*s);
        };
        state.train(&objective, t, cfg.seed, &train_set, &validation_set, epochs, &mut on_step, on_epoch)?;
    }
    if let Some(e) = io_error.or(checkpoint_error) {
        return Err(e);
    }
    loss_csv.flush()?;
    epoch_csv.flush()?;

    let run_best = state.best.as_ref().filter(|b| prior_best.is_none_or(|(_, v)| b.validation_total < v));
    let best = run_best.map(|b| (b.epoch, b.validation_total)).or(prior_best);
    let manifest = |params_epoch: usize| CheckpointManifest {
        version: CHECKPOINT_VERSION,
        network: state.net.manifest(),
        epoch: params_epoch,
        step: state.step,
        scale,
        blood_fraction: vb,
        mode: physics.mode(),
        early_frames: cfg.early_frames,
        n_frames: physics.n_frames(),
        seed: cfg.seed,
        best_epoch: best.map(|b| b.0),
        best_validation: best.map(|b| b.1),
        scale_clamp: format!("{}", cfg.network.clamp),
    };
    Checkpoint { manifest: manifest(state.epoch), params: state.net.params().to_vec(), adam: Some(state.adam.clone()) }.save(out.join("checkpoint"))?;
    if let Some(b) = run_best {
        Checkpoint { manifest: manifest(b.epoch), params: b.params.clone(), adam: None }.save(out.join("best"))?;
    }

    let last = summaries.last();
    write_json(
        &out.join("train.json"),
        &json!({
            "first_epoch": first_epoch,
            "epochs": state.epoch,
            "steps": state.step,
            "scale": scale,
            "blood_fraction": vb,
            "train_samples": train_set.len(),
            "validation_samples": validation_set.len(),
            "initial_train_total": summaries.first().map(|s| s.train_total),
            "final_train_total": last.map(|s| s.train_total),
            "best_epoch": best.map(|b| b.0),
        }),
    )?;
    println!("trained to epoch {} ({} steps) -> {}", state.epoch, state.step, out.display());
    Ok(())
}

/// The kinetic model shared by training and prediction.
pub fn physics_for(cfg: &ExperimentConfig, vb: f64) -> CmdResult<Physics> {
    let schedule = cfg.frame_schedule()?;
    let tracer = cfg.tracer_def()?;
    let model = FrameModel::new(&cfg.input_function()?, &tracer, &schedule, cfg.simulation.steps_per_min)?;
    let mode = if tracer.reversible { GraphicalMode::Logan } else { GraphicalMode::Patlak };
    Ok(Physics::new(model, mode, FitWindow::default_for(&schedule)?, vb)?)
}

/// Reads every sample; those with index below `meta.n_train` train, the
/// rest validate.
pub fn load_dataset(root: &Path, cfg: &ExperimentConfig) -> CmdResult<(Vec<Sample>, Vec<Sample>)> {
    let meta = read_meta(root).map_err(|e| data_err(format!("dataset {}: {e}", root.display())))?;
    let dirs = list_samples(root)?;
    if dirs.is_empty() {
        return Err(data_err(format!("dataset {} has no samples", root.display())));
    }
    let n_train = meta.get("n_train").and_then(|v| v.as_u64()).map_or(dirs.len(), |n| n as usize);
    let samples: Vec<Sample> = dirs.par_iter().map(|d| read_sample(d).map_err(|e| data_err(format!("{}: {e}", d.display())))).collect::<CmdResult<_>>()?;
    let n_frames = cfg.frame_schedule()?.len();
    if let Some(s) = samples.iter().find(|s| s.noisy.width != cfg.image_size || s.noisy.height != cfg.image_size || s.noisy.n_frames() != n_frames) {
        return Err(data_err(format!(
            "sample {} is {}x{} with {} frames; the configuration expects {size}x{size} with {n_frames}",
            s.index,
            s.noisy.width,
            s.noisy.height,
            s.noisy.n_frames(),
            size = cfg.image_size
        )));
    }
    let (train, validation): (Vec<Sample>, Vec<Sample>) = samples.into_iter().partition(|s| s.index < n_train);
    if train.is_empty() {
        return Err(data_err("dataset has no training samples"));
    }
    Ok((train, validation))
}
