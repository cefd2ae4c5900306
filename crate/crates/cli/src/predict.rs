use log::{info, warn};
use petkin_core::image::DynamicImage;
use petkin_core::io::{write_pgm, ArrayFile};
use petkin_core::training::{predict, Checkpoint, Prediction};
use serde_json::json;

use crate::train::physics_for;
use crate::{data_err, load_config, out_dir, read_array, write_json, CmdResult, Common, PredictArgs};

pub fn run(common: &Common, args: &PredictArgs) -> CmdResult {
    let cfg = load_config(common)?;
    let out = out_dir(common, Some(&cfg), "predict")?;
    let ck = Checkpoint::load(&args.checkpoint).map_err(|e| data_err(format!("{}: {e}", args.checkpoint.display())))?;
    let m = &ck.manifest;
    let schedule = cfg.frame_schedule()?;
    if m.early_frames != cfg.early_frames || m.network.channels != cfg.early_frames || m.n_frames != schedule.len() {
        return Err(data_err(format!(
            "checkpoint expects {} early frames of {} (network channels {}), the configuration has {} of {}",
            m.early_frames,
            m.n_frames,
            m.network.channels,
            cfg.early_frames,
            schedule.len()
        )));
    }
    let input = read_array(&args.input)?;
    let input = input.to_dynamic(Some(&schedule)).map_err(|e| data_err(format!("{}: {e}", args.input.display())))?;
    if input.n_frames() < m.early_frames {
        return Err(data_err(format!("input has {} frames, the network needs {}", input.n_frames(), m.early_frames)));
    }
    let early = input.leading_frames(m.early_frames)?;
    let net = ck.network()?;
    let physics = physics_for(&cfg, m.blood_fraction)?;
    if physics.mode() != m.mode {
        return Err(data_err("checkpoint tracer mode does not match the configuration"));
    }
    let mut pred = predict(&net, &physics, &early, m.scale)?;
    let background = zero_background(&mut pred, &early);
    if pred.clamped > 0 {
        warn!("{} negative rate constants were clamped to zero", pred.clamped);
    }

    for (c, name) in ["k1", "k2", "k3", "k4"].iter().enumerate() {
        ArrayFile::from_image(&pred.params.channel(c), json!({ "kind": name }))?.write(out.join(format!("{name}.pkarr")))?;
    }
    ArrayFile::from_dynamic(&pred.frames, json!({ "kind": "predicted" }))?.write(out.join("frames.pkarr"))?;
    let last = pred.frames.frame_image(pred.frames.n_frames() - 1);
    write_pgm(out.join("last_frame.pgm"), &last, 0.0, last.max())?;
    write_json(
        &out.join("predict.json"),
        &json!({
            "checkpoint_epoch": m.epoch,
            "width": early.width,
            "height": early.height,
            "frames": pred.frames.n_frames(),
            "clamped": pred.clamped,
            "background_voxels": background,
        }),
    )?;
    info!("predicted {}x{} parameter images and {} frames", early.width, early.height, pred.frames.n_frames());
    println!("prediction -> {}", out.display());
    Ok(())
}

/// Voxels whose early frames are all zero carry no signal; their outputs
/// are set to zero. Returns how many there were.
fn zero_background(pred: &mut Prediction, early: &DynamicImage) -> usize {
    let mut count = 0;
    for v in 0..early.n_voxels() {
        if early.voxel_series(v).iter().all(|x| *x == 0.0) {
            count += 1;
            let p = &mut pred.params.params[v];
            (p.k1, p.k2, p.k3, p.k4) = (0.0, 0.0, 0.0, 0.0);
            pred.frames.set_voxel_series(v, &vec![0.0; pred.frames.n_frames()]);
        }
    }
    count
}
