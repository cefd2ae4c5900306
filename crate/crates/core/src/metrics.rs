//! Image-quality and ROI statistics: MSE, PSNR, SSIM, ROI bias/variance and
//! line profiles.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) || a.data.len() != b.data.len() {
        return Err(Error::Shape(format!("images differ in shape: {}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    if a.data.is_empty() {
        return Err(invalid("images are empty"));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    Ok(mse_slices(&a.data, &b.data))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10·log10(peak²/mse)`; `+∞` when the images are identical.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    psnr_from_mse(m, peak)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid(format!("PSNR peak must be > 0, got {peak}")));
    }
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Mean local SSIM over all full placements of an 11×11 Gaussian window
/// (σ = 1.5), shrunk to the image size for small images. `peak` sets the
/// stabilising constants `(0.01·peak)²` and `(0.03·peak)²`.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check(a, b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid(format!("SSIM peak must be > 0, got {peak}")));
    }
    let size = SSIM_WINDOW.min(a.width).min(a.height);
    let half = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let gsum: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / gsum).collect();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - size {
        for x0 in 0..=w - size {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..size {
                for dx in 0..size {
                    let wt = g[dy] * g[dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (p, q) = (a.data[i], b.data[i]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// All three metrics with `peak` = max of the target.
pub fn compare(pred: &Image, target: &Image) -> Result<MetricReport> {
    let peak = target.max();
    let peak = if peak > 0.0 { peak } else { 1.0 };
    Ok(MetricReport { mse: mse(pred, target)?, psnr: psnr(pred, target, peak)?, ssim: ssim(pred, target, peak)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub bias: f64,
    pub variance: f64,
    /// Voxels used (truth > 0).
    pub n: usize,
    /// Masked voxels dropped because their truth was ≤ 0.
    pub excluded: usize,
}

/// How the spread term treats each voxel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceForm {
    /// `(1/N)·Σ((xᵢ − x̄)/xᵢ)²` with `x̄` the prediction mean.
    #[default]
    AsPrinted,
    /// `(1/N)·Σ((x̂ᵢ − x̄)/xᵢ)²`.
    PredictionSpread,
}

/// `bias = (1/N)·Σ|xᵢ − x̂ᵢ|/xᵢ` and the variance term over the masked
/// voxels with positive truth.
pub fn roi_bias_variance(truth: &Image, pred: &Image, mask: Option<&[bool]>, form: VarianceForm) -> Result<RoiStats> {
    check(truth, pred)?;
    if let Some(m) = mask {
        if m.len() != truth.data.len() {
            return Err(Error::Shape("ROI mask does not match the image".into()));
        }
    }
    let selected: Vec<usize> = (0..truth.data.len()).filter(|&i| mask.is_none_or(|m| m[i])).collect();
    let used: Vec<usize> = selected.iter().copied().filter(|&i| truth.data[i] > 0.0).collect();
    if used.is_empty() {
        return Err(invalid("ROI has no voxels with positive ground truth"));
    }
    let n = used.len() as f64;
    let mean_pred = used.iter().map(|&i| pred.data[i]).sum::<f64>() / n;
    let bias = used.iter().map(|&i| (truth.data[i] - pred.data[i]).abs() / truth.data[i]).sum::<f64>() / n;
    let variance = used
        .iter()
        .map(|&i| {
            let x = truth.data[i];
            let num = match form {
                VarianceForm::AsPrinted => x - mean_pred,
                VarianceForm::PredictionSpread => pred.data[i] - mean_pred,
            };
            (num / x).powi(2)
        })
        .sum::<f64>()
        / n;
    Ok(RoiStats { bias, variance, n: used.len(), excluded: selected.len() - used.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileAxis {
    Row,
    Column,
}

pub fn line_profile(image: &Image, axis: ProfileAxis, index: usize) -> Result<Vec<f64>> {
    match axis {
        ProfileAxis::Row if index < image.height => Ok(image.data[index * image.width..(index + 1) * image.width].to_vec()),
        ProfileAxis::Column if index < image.width => Ok((0..image.height).map(|y| image.get(index, y)).collect()),
        _ => Err(invalid(format!("{axis:?} {index} is outside a {}x{} image", image.width, image.height))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, data: Vec<f64>) -> Image {
        Image::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn psnr_of_half_offset() {
        let a = img(4, 4, vec![0.0; 16]);
        let b = img(4, 4, vec![0.5; 16]);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert!((psnr(&a, &b, 1.0).unwrap() - 6.0206).abs() < 1e-3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bias_and_variance_examples() {
        let truth = img(2, 1, vec![1.0, 2.0]);
        let s = roi_bias_variance(&truth, &img(2, 1, vec![2.0, 2.0]), None, VarianceForm::AsPrinted).unwrap();
        assert_eq!(s.bias, 0.5);
        let s = roi_bias_variance(&truth, &img(2, 1, vec![2.0, 4.0]), None, VarianceForm::AsPrinted).unwrap();
        assert_eq!(s.variance, 2.125);
        let c = img(2, 1, vec![3.0, 3.0]);
        let s = roi_bias_variance(&c, &c, None, VarianceForm::AsPrinted).unwrap();
        assert_eq!((s.bias, s.variance), (0.0, 0.0));
    }

    #[test]
    fn nonpositive_truth_is_excluded() {
        let truth = img(3, 1, vec![0.0, -1.0, 2.0]);
        let s = roi_bias_variance(&truth, &img(3, 1, vec![5.0, 5.0, 1.0]), None, VarianceForm::AsPrinted).unwrap();
        assert_eq!((s.n, s.excluded), (1, 2));
        assert_eq!(s.bias, 0.5);
        assert!(roi_bias_variance(&truth, &truth, Some(&[true, true, false]), VarianceForm::AsPrinted).is_err());
    }

    #[test]
    fn ssim_identity_and_shape_errors() {
        let a = img(16, 16, (0..256).map(|i| (i % 17) as f64).collect());
        assert!((ssim(&a, &a, 16.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &img(4, 4, vec![0.0; 16]), 1.0).is_err());
        // smaller than the window: shrinks instead of failing
        let s = img(5, 5, (0..25).map(|i| i as f64).collect());
        assert!((ssim(&s, &s, 24.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profiles() {
        let mut a = img(3, 2, vec![0.0; 6]);
        a.set(1, 1, 7.0);
        assert_eq!(line_profile(&a, ProfileAxis::Row, 1).unwrap(), vec![0.0, 7.0, 0.0]);
        assert_eq!(line_profile(&a, ProfileAxis::Column, 1).unwrap(), vec![0.0, 7.0]);
        assert!(line_profile(&a, ProfileAxis::Row, 2).is_err());
    }
}
