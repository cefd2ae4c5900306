use std::path::Path;

use log::{info, warn};
use petkin_core::config::ExperimentConfig;
use petkin_core::estimation::{fit_image, FitConfig};
use petkin_core::graphical::{graphical_image, FitWindow, GraphicalMode};
use petkin_core::image::{DynamicImage, Image};
use petkin_core::io::ArrayFile;
use petkin_core::kinetics::{FrameModel, InputCurve, InputFunction};
use serde_json::{json, Value};

use crate::{data_err, load_config, mean_blood_fraction, out_dir, read_array, read_labels, write_json, CmdResult, Common, FitArgs, FitMethod};

pub fn run(common: &Common, args: &FitArgs) -> CmdResult {
    let cfg = load_config(common)?;
    let out = out_dir(common, Some(&cfg), "fit")?;
    let input = read_array(&args.input)?;
    let dynamic = to_dynamic(&input, &cfg)?;
    let plasma = match &args.input_function {
        Some(p) => read_input_function(p)?,
        None => cfg.tracer.input_function.clone(),
    };
    let cp = InputFunction::new(plasma, None).map_err(|e| data_err(format!("input function: {e}")))?;
    let model = FrameModel::new(&cp, &cfg.tracer_def()?, &dynamic.schedule, cfg.simulation.steps_per_min)?;

    let mut mask: Vec<bool> = (0..dynamic.n_voxels()).map(|v| dynamic.voxel_series(v).iter().any(|x| *x != 0.0)).collect();
    if let Some(path) = &args.mask {
        let (w, h, labels) = read_labels(path)?;
        if w != dynamic.width || h != dynamic.height {
            return Err(data_err(format!("mask is {w}x{h}, image is {}x{}", dynamic.width, dynamic.height)));
        }
        for (m, l) in mask.iter_mut().zip(&labels) {
            *m &= *l > 0;
        }
    }
    let fitted = mask.iter().filter(|m| **m).count();
    let mut warnings = Vec::new();
    let report = match args.method {
        FitMethod::Nlls => {
            let mut fc = FitConfig::from_means(&cfg.roi_table(), cfg.fit.bound_factor, mean_blood_fraction(&cfg))?;
            fc.max_iterations = cfg.fit.max_iterations;
            fc.tolerance = cfg.fit.tolerance;
            let fits = fit_image(&dynamic, &model, &fc, Some(&mask))?;
            let (w, h) = (dynamic.width, dynamic.height);
            for (c, name) in ["k1", "k2", "k3", "k4"].iter().enumerate() {
                write_image(&out.join(format!("{name}.pkarr")), &fits.params.channel(c), name)?;
            }
            write_image(&out.join("residual.pkarr"), &fits.residual, "residual")?;
            let conv = Image::from_vec(w, h, fits.converged.iter().map(|c| if *c { 1.0 } else { 0.0 }).collect())?;
            write_image(&out.join("converged.pkarr"), &conv, "converged")?;
            let converged = fits.converged.iter().zip(&mask).filter(|(c, m)| **c && **m).count();
            json!({ "converged": converged, "bounds": { "lower": fc.lower, "upper": fc.upper }, "vb": fc.vb })
        }
        FitMethod::Logan | FitMethod::Patlak => {
            let mode = if args.method == FitMethod::Logan { GraphicalMode::Logan } else { GraphicalMode::Patlak };
            let reversible = cfg.tracer.reversible;
            if mode == GraphicalMode::Logan && !reversible {
                warnings.push(format!("Logan analysis assumes a reversible tracer; {} is configured as irreversible", cfg.tracer.name));
            }
            if mode == GraphicalMode::Patlak && reversible {
                warnings.push(format!("Patlak analysis assumes an irreversible tracer; {} is configured as reversible", cfg.tracer.name));
            }
            let window = FitWindow::default_for(&dynamic.schedule)?;
            let images = graphical_image(&dynamic, &model, mode, &window, Some(&mask))?;
            write_image(&out.join("slope.pkarr"), &images.slope, "slope")?;
            write_image(&out.join("intercept.pkarr"), &images.intercept, "intercept")?;
            let failed = images.failed.iter().filter(|f| **f).count();
            json!({ "failed": failed, "window": window.frames() })
        }
    };
    for w in &warnings {
        warn!("{w}");
    }
    let mut report = report;
    let method = format!("{:?}", args.method).to_lowercase();
    if let Value::Object(m) = &mut report {
        m.insert("method".into(), json!(method));
        m.insert("input".into(), json!(args.input.display().to_string()));
        m.insert("width".into(), json!(dynamic.width));
        m.insert("height".into(), json!(dynamic.height));
        m.insert("frames".into(), json!(dynamic.n_frames()));
        m.insert("fitted_voxels".into(), json!(fitted));
        m.insert("warnings".into(), json!(warnings));
    }
    write_json(&out.join("report.json"), &report)?;
    info!("{method}: fitted {fitted} voxels");
    println!("{method} fit of {fitted} voxels -> {}", out.display());
    Ok(())
}

/// `[T, H, W]` arrays are images; a `[T]` array is a single voxel. The
/// schedule comes from the array metadata, or from the configuration.
fn to_dynamic(a: &ArrayFile, cfg: &ExperimentConfig) -> CmdResult<DynamicImage> {
    let schedule = cfg.frame_schedule()?;
    let d = match a.dims[..] {
        [t] => ArrayFile::new(vec![t, 1, 1], a.data.clone(), a.meta.clone())?.to_dynamic(Some(&schedule))?,
        [_, _, _] => a.to_dynamic(Some(&schedule))?,
        _ => return Err(data_err(format!("expected a [T] or [T, H, W] array, got dims {:?}", a.dims))),
    };
    Ok(d)
}

/// Two-column CSV (`time` in minutes, `value`) with a header row.
fn read_input_function(path: &Path) -> CmdResult<InputCurve> {
    let file = std::fs::File::open(path).map_err(|e| data_err(format!("input function file {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for row in reader.deserialize::<(f64, f64)>() {
        let (t, v) = row.map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        times.push(t);
        values.push(v);
    }
    let curve = InputCurve::Sampled { times, values };
    curve.validate().map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(curve)
}

fn write_image(path: &Path, image: &Image, kind: &str) -> CmdResult {
    ArrayFile::from_image(image, json!({ "kind": kind }))?.write(path)?;
    Ok(())
}
