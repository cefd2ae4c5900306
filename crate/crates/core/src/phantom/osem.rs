use crate::error::{invalid, Error, Result};
use crate::image::Image;

use super::projector::{Projector, Sinogram};

/// Ordered-subsets EM with interleaved angular subsets (`s, s+S, s+2S, …`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Osem {
    pub iterations: usize,
    pub subsets: usize,
}

impl Osem {
    pub fn new(iterations: usize, subsets: usize) -> Result<Self> {
        if iterations == 0 || subsets == 0 {
            return Err(invalid("OSEM needs at least one iteration and one subset"));
        }
        Ok(Self { iterations, subsets })
    }

    pub fn reconstruct(&self, projector: &Projector, sino: &Sinogram) -> Result<Image> {
        self.reconstruct_with(projector, sino, |_, _| {})
    }

    /// Runs the reconstruction, calling `observe(iteration, image)` after each
    /// full pass over the subsets.
    pub fn reconstruct_with(&self, projector: &Projector, sino: &Sinogram, mut observe: impl FnMut(usize, &[f64])) -> Result<Image> {
        let g = projector.geometry();
        if sino.n_angles != g.n_angles() || sino.n_bins != g.n_bins || sino.data.len() != g.n_rays() {
            return Err(Error::Shape("sinogram does not match the projector geometry".into()));
        }
        if self.subsets > g.n_angles() {
            return Err(invalid(format!("{} subsets exceed {} projection angles", self.subsets, g.n_angles())));
        }
        if let Some(v) = sino.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("sinogram values must be finite and >= 0, found {v}")));
        }
        let n_pix = projector.n_pixels();
        let nb = g.n_bins;
        let subset_rows: Vec<Vec<usize>> = (0..self.subsets)
            .map(|s| (s..g.n_angles()).step_by(self.subsets).flat_map(|a| a * nb..(a + 1) * nb).collect())
            .collect();
        let sensitivity: Vec<Vec<f64>> = subset_rows
            .iter()
            .map(|rows| {
                let mut sens = vec![0.0; n_pix];
                for &r in rows {
                    projector.row_scatter(r, 1.0, &mut sens);
                }
                sens
            })
            .collect();

        let total_sens: f64 = sensitivity.iter().flatten().sum();
        let total_counts = sino.total();
        let init = if total_counts > 0.0 && total_sens > 0.0 { total_counts / total_sens } else { 1.0 };
        let mut x = vec![init; n_pix];
        let mut back = vec![0.0; n_pix];
        for it in 0..self.iterations {
            for (rows, sens) in subset_rows.iter().zip(&sensitivity) {
                back.iter_mut().for_each(|b| *b = 0.0);
                for &r in rows {
                    let y = sino.data[r];
                    if y == 0.0 {
                        continue;
                    }
                    let est = projector.row_dot(r, &x);
                    if est > 0.0 {
                        projector.row_scatter(r, y / est, &mut back);
                    }
                }
                for j in 0..n_pix {
                    x[j] = if sens[j] > 0.0 { x[j] * back[j] / sens[j] } else { 0.0 };
                }
            }
            observe(it + 1, &x);
        }
        Image::from_vec(g.image_size, g.image_size, x)
    }
}

pub fn osem_reconstruct(sino: &Sinogram, projector: &Projector, iterations: usize, subsets: usize) -> Result<Image> {
    Osem::new(iterations, subsets)?.reconstruct(projector, sino)
}

/// `Σ y·ln(ŷ) − ŷ` (constant terms dropped); bins with `ŷ = 0` contribute 0.
pub fn poisson_log_likelihood(measured: &[f64], expected: &[f64]) -> f64 {
    measured
        .iter()
        .zip(expected)
        .map(|(&y, &e)| if e > 0.0 { y * e.ln() - e } else { 0.0 })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let p = Projector::for_image(16).unwrap();
        let g = p.geometry();
        let sino = Sinogram { n_angles: g.n_angles(), n_bins: g.n_bins, data: vec![0.0; g.n_rays()] };
        let img = osem_reconstruct(&sino, &p, 3, 4).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_settings() {
        let p = Projector::for_image(16).unwrap();
        let g = p.geometry();
        let sino = Sinogram { n_angles: g.n_angles(), n_bins: g.n_bins, data: vec![1.0; g.n_rays()] };
        assert!(osem_reconstruct(&sino, &p, 0, 4).is_err());
        assert!(osem_reconstruct(&sino, &p, 1, 17).is_err());
        let short = Sinogram { data: vec![1.0; 3], ..sino };
        assert!(osem_reconstruct(&short, &p, 1, 1).is_err());
    }

    #[test]
    fn mlem_likelihood_increases() {
        let n = 16;
        let p = Projector::for_image(n).unwrap();
        let mut img = Image::zeros(n, n);
        for y in 4..12 {
            for x in 5..11 {
                img.set(x, y, 1.0 + (x + y) as f64 * 0.1);
            }
        }
        let sino = p.forward(&img).unwrap();
        let mut ll = Vec::new();
        Osem::new(8, 1)
            .unwrap()
            .reconstruct_with(&p, &sino, |_, x| ll.push(poisson_log_likelihood(&sino.data, &p.forward_raw(x).unwrap())))
            .unwrap();
        for w in ll.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{ll:?}");
        }
    }
}
