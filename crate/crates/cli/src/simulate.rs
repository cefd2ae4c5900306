use std::path::Path;

use log::info;
use petkin_core::config::ExperimentConfig;
use petkin_core::phantom::{build_dataset, write_sample, LabelMap, SimulationSetup};
use serde_json::json;

use crate::{data_err, load_config, out_dir, read_array, write_json, CmdResult, Common};

// Samples are built and written in batches to bound memory on large runs.
const BATCH: usize = 16;

pub fn run(common: &Common) -> CmdResult {
    let cfg = load_config(common)?;
    let out = out_dir(common, Some(&cfg), "dataset")?;
    let base = common.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
    simulate(&cfg, base, &out)
}

/// Writes `meta.json` and every sample of the configured dataset to `out`.
/// `base` resolves a relative label-map path.
pub fn simulate(cfg: &ExperimentConfig, base: &Path, out: &Path) -> CmdResult {
    let label_map = match &cfg.phantom.label_map {
        Some(p) => {
            let path = base.join(p);
            let img = read_array(&path)?.to_image().map_err(|e| data_err(format!("{}: {e}", path.display())))?;
            Some(LabelMap::from_image(&img)?)
        }
        None => None,
    };
    let setup = SimulationSetup::from_config(cfg, label_map)?;
    let total = cfg.simulation.n_train + cfg.simulation.n_test;

    let meta = json!({
        "format": 1,
        "generator": concat!("petkin ", env!("CARGO_PKG_VERSION")),
        "seed": cfg.seed,
        "n_train": cfg.simulation.n_train,
        "n_test": cfg.simulation.n_test,
        "n_samples": total,
        "image_size": cfg.image_size,
        "early_frames": cfg.early_frames,
        "schedule": setup.model.schedule().frames(),
        "tracer": cfg.tracer,
        "graphical_mode": setup.mode,
        "fit_window": setup.window.frames(),
        "config": cfg,
    });
    write_json(&out.join("meta.json"), &meta)?;

    let mut start = 0;
    while start < total {
        let end = (start + BATCH).min(total);
        for sample in build_dataset(&setup, cfg.seed, start..end)? {
            write_sample(out, &sample, cfg.early_frames)?;
        }
        info!("simulated samples {start}..{end} of {total}");
        start = end;
    }
    println!(
        "simulated {total} samples ({} train, {} test), {}x{}, {} frames -> {}",
        cfg.simulation.n_train,
        cfg.simulation.n_test,
        cfg.image_size,
        cfg.image_size,
        setup.model.schedule().len(),
        out.display()
    );
    Ok(())
}
