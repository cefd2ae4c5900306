use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Result};

use super::projector::Sinogram;

/// Poisson noise at a relative level: the sinogram is scaled so its total
/// equals `base_counts / noise_level` expected counts, sampled, and scaled
/// back. Lower `noise_level` means more counts and less noise.
pub fn add_poisson(sino: &Sinogram, noise_level: f64, base_counts: f64, seed: u64) -> Result<Sinogram> {
    add_poisson_with(sino, noise_level, base_counts, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn add_poisson_with<R: Rng + ?Sized>(sino: &Sinogram, noise_level: f64, base_counts: f64, rng: &mut R) -> Result<Sinogram> {
    if !(noise_level.is_finite() && noise_level > 0.0) {
        return Err(invalid(format!("noise level must be > 0, got {noise_level}")));
    }
    if !(base_counts.is_finite() && base_counts > 0.0) {
        return Err(invalid(format!("base counts must be > 0, got {base_counts}")));
    }
    if let Some(v) = sino.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(invalid(format!("sinogram values must be finite and >= 0, found {v}")));
    }
    let total = sino.total();
    let mut out = sino.clone();
    if total <= 0.0 {
        return Ok(out);
    }
    let scale = base_counts / noise_level / total;
    for v in &mut out.data {
        let mean = *v * scale;
        let counts = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(rng) } else { 0.0 };
        *v = counts / scale;
    }
    Ok(out)
}
