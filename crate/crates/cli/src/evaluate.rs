use std::collections::BTreeSet;
use std::path::Path;

use log::{info, warn};
use petkin_core::image::Image;
use petkin_core::io::{write_pgm, ArrayFile};
use petkin_core::metrics::{line_profile, mse, psnr_from_mse, roi_bias_variance, ssim, ProfileAxis, VarianceForm};
use serde_json::{json, Value};

use crate::{data_err, load_config, out_dir, read_array, read_labels, write_json, CmdResult, Common, EvaluateArgs, Failure};

/// Non-finite numbers become the strings `"inf"`, `"-inf"` and `"nan"`.
pub fn json_number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Frames of a `[H, W]`, `[T, H, W]` or `[N]` array as `(T, H, W, data)`.
fn frames_of(a: &ArrayFile) -> CmdResult<(usize, usize, usize, Vec<f64>)> {
    let (t, h, w) = match a.dims[..] {
        [n] => (1, 1, n),
        [h, w] => (1, h, w),
        [t, h, w] => (t, h, w),
        _ => return Err(data_err(format!("unsupported array dims {:?}", a.dims))),
    };
    Ok((t, h, w, a.to_f64()))
}

pub fn run(common: &Common, args: &EvaluateArgs) -> CmdResult {
    let cfg = match &common.config {
        Some(_) => Some(load_config(common)?),
        None => None,
    };
    let out = out_dir(common, cfg.as_ref(), "evaluate")?;
    let pred = read_array(&args.pred)?;
    let target = read_array(&args.target)?;
    if pred.dims != target.dims {
        return Err(data_err(format!("shape mismatch: prediction {:?}, target {:?}", pred.dims, target.dims)));
    }
    let (t, h, w, p) = frames_of(&pred)?;
    let (_, _, _, q) = frames_of(&target)?;
    let n = h * w;
    let last = args.last_frame.unwrap_or(t);
    if args.first_frame >= last || last > t {
        return Err(Failure::Usage(format!("frame range {}..{last} is outside 0..{t}", args.first_frame)));
    }
    let frames: Vec<usize> = (args.first_frame..last).collect();
    let image = |data: &[f64], k: usize| Image::from_vec(w, h, data[k * n..(k + 1) * n].to_vec());
    let peak = match args.peak {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => return Err(Failure::Usage(format!("--peak must be positive, got {v}"))),
        None => {
            let m = frames.iter().flat_map(|&k| q[k * n..(k + 1) * n].iter().copied()).fold(0.0, f64::max);
            if m > 0.0 { m } else { 1.0 }
        }
    };

    let mut rows = Vec::new();
    let mut sq_sum = 0.0;
    let mut ssim_sum = 0.0;
    for &k in &frames {
        let (a, b) = (image(&p, k)?, image(&q, k)?);
        let e = mse(&a, &b)?;
        let s = ssim(&a, &b, peak)?;
        sq_sum += e;
        ssim_sum += s;
        rows.push((k, e, psnr_from_mse(e, peak)?, s));
        write_previews(&out, k, &a, &b, peak)?;
    }
    let pooled = sq_sum / frames.len() as f64;
    let aggregate = (pooled, psnr_from_mse(pooled, peak)?, ssim_sum / frames.len() as f64);

    let mut csv = csv::Writer::from_path(out.join("metrics.csv"))?;
    csv.write_record(["frame", "mse", "psnr", "ssim"])?;
    for (k, e, ps, s) in &rows {
        csv.write_record([k.to_string(), e.to_string(), ps.to_string(), s.to_string()])?;
    }
    csv.write_record(["aggregate".to_string(), aggregate.0.to_string(), aggregate.1.to_string(), aggregate.2.to_string()])?;
    csv.flush()?;

    let roi = match &args.mask {
        Some(path) => roi_stats(path, &frames, w, h, &p, &q)?,
        None => None,
    };
    if let Some(rows) = &roi {
        write_roi_csv(&out.join("roi.csv"), rows)?;
    }

    let profiles = [(ProfileAxis::Row, args.profile_row), (ProfileAxis::Column, args.profile_col)];
    if profiles.iter().any(|(_, i)| i.is_some()) {
        let mut csv = csv::Writer::from_path(out.join("profiles.csv"))?;
        csv.write_record(["frame", "axis", "index", "position", "pred", "target"])?;
        for &k in &frames {
            let (a, b) = (image(&p, k)?, image(&q, k)?);
            for (axis, index) in profiles {
                let Some(index) = index else { continue };
                let (pa, pb) = (line_profile(&a, axis, index)?, line_profile(&b, axis, index)?);
                let name = if axis == ProfileAxis::Row { "row" } else { "column" };
                for (pos, (x, y)) in pa.iter().zip(&pb).enumerate() {
                    csv.write_record([k.to_string(), name.into(), index.to_string(), pos.to_string(), x.to_string(), y.to_string()])?;
                }
            }
        }
        csv.flush()?;
    }

    let report = json!({
        "pred": args.pred.display().to_string(),
        "target": args.target.display().to_string(),
        "dims": pred.dims,
        "peak": peak,
        "frames": rows.iter().map(|(k, e, ps, s)| json!({ "frame": k, "mse": json_number(*e), "psnr": json_number(*ps), "ssim": json_number(*s) })).collect::<Vec<_>>(),
        "aggregate": { "mse": json_number(aggregate.0), "psnr": json_number(aggregate.1), "ssim": json_number(aggregate.2) },
        "roi": roi.as_ref().map(|r| r.iter().map(RoiRow::to_json).collect::<Vec<_>>()),
    });
    write_json(&out.join("metrics.json"), &report)?;
    info!("scored frames {}..{last}: psnr {} dB, ssim {:.4}", args.first_frame, aggregate.1, aggregate.2);
    println!("mse {} psnr {} ssim {} -> {}", aggregate.0, aggregate.1, aggregate.2, out.display());
    Ok(())
}

struct RoiRow {
    label: u16,
    n: usize,
    excluded: usize,
    bias: f64,
    variance: f64,
    variance_prediction_spread: f64,
}

impl RoiRow {
    fn to_json(&self) -> Value {
        json!({
            "label": self.label,
            "n": self.n,
            "excluded": self.excluded,
            "bias": json_number(self.bias),
            "variance": json_number(self.variance),
            "variance_prediction_spread": json_number(self.variance_prediction_spread),
        })
    }
}

/// Bias and variance per label, pooled over the scored frames. `None` when
/// the mask selects nothing.
fn roi_stats(path: &Path, frames: &[usize], w: usize, h: usize, p: &[f64], q: &[f64]) -> CmdResult<Option<Vec<RoiRow>>> {
    let (mw, mh, labels) = read_labels(path)?;
    if mw != w || mh != h {
        return Err(data_err(format!("shape mismatch: mask is {mw}x{mh}, images are {w}x{h}")));
    }
    let ids: BTreeSet<u16> = labels.iter().copied().filter(|l| *l > 0).collect();
    if ids.is_empty() {
        warn!("mask {} selects no voxels; ROI statistics omitted", path.display());
        return Ok(None);
    }
    let n = w * h;
    let gather = |d: &[f64]| -> CmdResult<Image> {
        let data: Vec<f64> = frames.iter().flat_map(|&k| d[k * n..(k + 1) * n].iter().copied()).collect();
        Ok(Image::from_vec(n, frames.len(), data)?)
    };
    let (pred, truth) = (gather(p)?, gather(q)?);
    let mut rows = Vec::new();
    for id in ids {
        let mask: Vec<bool> = frames.iter().flat_map(|_| labels.iter().map(|l| *l == id)).collect();
        let printed = roi_bias_variance(&truth, &pred, Some(&mask), VarianceForm::AsPrinted);
        let spread = roi_bias_variance(&truth, &pred, Some(&mask), VarianceForm::PredictionSpread);
        match (printed, spread) {
            (Ok(a), Ok(b)) => rows.push(RoiRow { label: id, n: a.n, excluded: a.excluded, bias: a.bias, variance: a.variance, variance_prediction_spread: b.variance }),
            (Err(e), _) | (_, Err(e)) => warn!("ROI {id}: {e}; skipped"),
        }
    }
    Ok(Some(rows))
}

fn write_roi_csv(path: &Path, rows: &[RoiRow]) -> CmdResult {
    let mut csv = csv::Writer::from_path(path)?;
    csv.write_record(["label", "n", "excluded", "bias", "variance", "variance_prediction_spread"])?;
    for r in rows {
        csv.write_record([
            r.label.to_string(),
            r.n.to_string(),
            r.excluded.to_string(),
            r.bias.to_string(),
            r.variance.to_string(),
            r.variance_prediction_spread.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

fn write_previews(out: &Path, k: usize, pred: &Image, target: &Image, peak: f64) -> CmdResult {
    write_pgm(out.join(format!("pred_{k:02}.pgm")), pred, 0.0, peak)?;
    write_pgm(out.join(format!("target_{k:02}.pgm")), target, 0.0, peak)?;
    let err = Image::from_vec(pred.width, pred.height, pred.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).collect())?;
    write_pgm(out.join(format!("error_{k:02}.pgm")), &err, 0.0, err.max())?;
    Ok(())
}
