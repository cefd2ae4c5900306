use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::kinetics::KineticParams;

/// Draws one parameter set per ROI: each rate constant from
/// `Normal(mean, cv·mean)` truncated at zero by resampling, and `V_B`
/// perturbed the same way then clamped to `[0, 1]`.
pub fn randomize_params(table: &[KineticParams], cv: f64, seed: u64) -> Result<Vec<KineticParams>> {
    randomize_params_with(table, cv, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn randomize_params_with<R: Rng + ?Sized>(table: &[KineticParams], cv: f64, rng: &mut R) -> Result<Vec<KineticParams>> {
    if !(cv.is_finite() && cv >= 0.0) {
        return Err(invalid(format!("coefficient of variation must be >= 0, got {cv}")));
    }
    table
        .iter()
        .map(|mean| {
            mean.validate()?;
            let k1 = truncated_normal(mean.k1, cv, rng);
            let k2 = truncated_normal(mean.k2, cv, rng);
            let k3 = truncated_normal(mean.k3, cv, rng);
            let k4 = truncated_normal(mean.k4, cv, rng);
            let vb = truncated_normal(mean.vb, cv, rng).clamp(0.0, 1.0);
            Ok(KineticParams::new(k1, k2, k3, k4, vb))
        })
        .collect()
}

fn truncated_normal<R: Rng + ?Sized>(mean: f64, cv: f64, rng: &mut R) -> f64 {
    let sd = cv * mean.abs();
    if sd == 0.0 {
        return mean;
    }
    let dist = Normal::new(mean, sd).expect("finite normal parameters");
    for _ in 0..10_000 {
        let v = dist.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
    0.0
}
