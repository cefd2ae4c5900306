use crate::error::{invalid, Result};
use crate::image::{DynamicImage, ParamMap};
use crate::kinetics::{FrameModel, FrameSchedule, InputFunction, KineticParams, Tracer, DEFAULT_STEPS_PER_MIN};

use super::labels::LabelMap;

/// Per-voxel parameter map: ROI `r` gets `params[r - 1]`, background is zero.
pub fn fill_param_map(map: &LabelMap, params: &[KineticParams]) -> Result<ParamMap> {
    check_table(map, params)?;
    let zero = KineticParams::new(0.0, 0.0, 0.0, 0.0, 0.0);
    let values = map.labels().iter().map(|&l| if l == 0 { zero } else { params[l as usize - 1] }).collect();
    Ok(ParamMap { width: map.width, height: map.height, params: values })
}

/// Noise-free decay-weighted frame images for a labelled phantom.
pub fn synthesize_dynamic(
    map: &LabelMap,
    params: &[KineticParams],
    cp: &InputFunction,
    tracer: &Tracer,
    schedule: &FrameSchedule,
) -> Result<DynamicImage> {
    let model = FrameModel::new(cp, tracer, schedule, DEFAULT_STEPS_PER_MIN)?;
    synthesize_with_model(map, params, &model)
}

pub fn synthesize_with_model(map: &LabelMap, params: &[KineticParams], model: &FrameModel) -> Result<DynamicImage> {
    check_table(map, params)?;
    let schedule = model.schedule().clone();
    let n_frames = schedule.len();
    let roi_frames = params.iter().map(|p| model.frames(p)).collect::<Result<Vec<_>>>()?;
    let mut out = DynamicImage::zeros(map.width, map.height, schedule);
    let n_vox = map.width * map.height;
    let data = out.data_mut();
    for (v, &l) in map.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let series = &roi_frames[l as usize - 1];
        for k in 0..n_frames {
            data[k * n_vox + v] = series[k];
        }
    }
    Ok(out)
}

fn check_table(map: &LabelMap, params: &[KineticParams]) -> Result<()> {
    if params.len() < map.n_rois() {
        return Err(invalid(format!("label map has {} ROIs but only {} parameter sets were given", map.n_rois(), params.len())));
    }
    params.iter().try_for_each(|p| p.validate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::FengCoefficients;

    #[test]
    fn roi_voxels_carry_their_tac() {
        let map = LabelMap::new(3, 1, vec![0, 1, 2]).unwrap();
        let params = [KineticParams::new(0.1, 0.12, 0.06, 0.0, 0.05), KineticParams::new(0.05, 0.1, 0.04, 0.0, 0.02)];
        let cp = InputFunction::feng(FengCoefficients::fdg()).unwrap();
        let tracer = Tracer::from_half_life("FDG", 109.77, false).unwrap();
        let schedule = FrameSchedule::standard_18();
        let model = FrameModel::new(&cp, &tracer, &schedule, DEFAULT_STEPS_PER_MIN).unwrap();
        let img = synthesize_with_model(&map, &params, &model).unwrap();
        assert!(img.voxel_series(0).iter().all(|&v| v == 0.0));
        assert_eq!(img.voxel_series(1), model.frames(&params[0]).unwrap());
        assert_eq!(img.voxel_series(2), model.frames(&params[1]).unwrap());
        assert!(synthesize_with_model(&map, &params[..1], &model).is_err());
    }
}
