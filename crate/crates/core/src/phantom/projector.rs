use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// 2-D parallel-beam geometry centred on the image.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionGeometry {
    pub image_size: usize,
    /// Projection angles in radians over `[0, π)`.
    pub angles: Vec<f64>,
    pub n_bins: usize,
    pub bin_spacing: f64,
    /// Sampling step along each ray, in voxels.
    pub ray_step: f64,
}

impl ProjectionGeometry {
    /// `size` angles and `ceil(√2·size)` unit-spaced bins, sampled every half voxel.
    pub fn for_image(size: usize) -> Self {
        let n_angles = size.max(1);
        let angles = (0..n_angles).map(|a| std::f64::consts::PI * a as f64 / n_angles as f64).collect();
        Self {
            image_size: size,
            angles,
            n_bins: (std::f64::consts::SQRT_2 * size as f64).ceil() as usize,
            bin_spacing: 1.0,
            ray_step: 0.5,
        }
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles() * self.n_bins
    }

    fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.angles.is_empty() || self.n_bins == 0 {
            return Err(invalid("projection geometry needs a non-empty image, angle set and detector"));
        }
        if !(self.bin_spacing > 0.0 && self.ray_step > 0.0) {
            return Err(invalid("bin spacing and ray step must be > 0"));
        }
        Ok(())
    }
}

/// Angle-major sinogram `[angle][bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub n_angles: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Precomputed ray-driven system matrix in CSR form. Each ray integral is a
/// sum of bilinearly interpolated image samples, so the backprojector is the
/// exact transpose of the forward projector.
#[derive(Clone, Debug)]
pub struct Projector {
    geometry: ProjectionGeometry,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f32>,
}

impl Projector {
    pub fn new(geometry: ProjectionGeometry) -> Result<Self> {
        geometry.validate()?;
        let rows: Vec<Vec<(u32, f32)>> = (0..geometry.n_rays()).into_par_iter().map(|r| ray_weights(&geometry, r)).collect();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, w) in row {
                cols.push(c);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self { geometry, row_ptr, cols, weights })
    }

    pub fn for_image(size: usize) -> Result<Self> {
        Self::new(ProjectionGeometry::for_image(size))
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn n_pixels(&self) -> usize {
        self.geometry.image_size * self.geometry.image_size
    }

    fn check_image(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_pixels() {
            return Err(Error::Shape(format!("projector expects {} pixels, got {}", self.n_pixels(), x.len())));
        }
        Ok(())
    }

    pub(crate) fn row_dot(&self, row: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.cols[a..b].iter().zip(&self.weights[a..b]).map(|(&c, &w)| w as f64 * x[c as usize]).sum()
    }

    pub(crate) fn row_scatter(&self, row: usize, value: f64, out: &mut [f64]) {
        let (a, b) = (self.row_ptr[row], self.row_ptr[row + 1]);
        for (&c, &w) in self.cols[a..b].iter().zip(&self.weights[a..b]) {
            out[c as usize] += w as f64 * value;
        }
    }

    pub fn forward(&self, image: &Image) -> Result<Sinogram> {
        if image.width != self.geometry.image_size || image.height != self.geometry.image_size {
            return Err(Error::Shape(format!(
                "projector built for {0}x{0} images, got {1}x{2}",
                self.geometry.image_size, image.width, image.height
            )));
        }
        Ok(Sinogram {
            n_angles: self.geometry.n_angles(),
            n_bins: self.geometry.n_bins,
            data: self.forward_raw(&image.data)?,
        })
    }

    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_image(x)?;
        Ok((0..self.geometry.n_rays()).map(|r| self.row_dot(r, x)).collect())
    }

    pub fn back(&self, sino: &Sinogram) -> Result<Image> {
        if sino.data.len() != self.geometry.n_rays() {
            return Err(Error::Shape(format!("sinogram needs {} rays, got {}", self.geometry.n_rays(), sino.data.len())));
        }
        let mut out = vec![0.0; self.n_pixels()];
        for (r, &v) in sino.data.iter().enumerate() {
            if v != 0.0 {
                self.row_scatter(r, v, &mut out);
            }
        }
        let n = self.geometry.image_size;
        Image::from_vec(n, n, out)
    }
}

/// One-off projection; builds the system matrix each call.
pub fn forward_project(image: &Image, geometry: &ProjectionGeometry) -> Result<Sinogram> {
    Projector::new(geometry.clone())?.forward(image)
}

fn ray_weights(g: &ProjectionGeometry, ray: usize) -> Vec<(u32, f32)> {
    let n = g.image_size;
    let (a, b) = (ray / g.n_bins, ray % g.n_bins);
    let theta = g.angles[a];
    let (c, s) = (theta.cos(), theta.sin());
    let offset = (b as f64 - (g.n_bins as f64 - 1.0) / 2.0) * g.bin_spacing;
    let centre = (n as f64 - 1.0) / 2.0;
    let half = std::f64::consts::SQRT_2 * n as f64 / 2.0 + 1.0;
    let m = (half / g.ray_step).ceil() as i64;
    let mut acc: Vec<(u32, f64)> = Vec::new();
    for i in -m..=m {
        let u = i as f64 * g.ray_step;
        let px = offset * c - u * s + centre;
        let py = offset * s + u * c + centre;
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
            let (x, y) = (x0 + dx, y0 + dy);
            if w > 0.0 && x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < n {
                acc.push(((y as usize * n + x as usize) as u32, w * g.ray_step));
            }
        }
    }
    acc.sort_unstable_by_key(|e| e.0);
    let mut out: Vec<(u32, f32)> = Vec::with_capacity(acc.len() / 2);
    let mut iter = acc.into_iter().peekable();
    while let Some((c, mut w)) = iter.next() {
        while let Some(&(c2, w2)) = iter.peek() {
            if c2 != c {
                break;
            }
            w += w2;
            iter.next();
        }
        out.push((c, w as f32));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geometry_defaults() {
        let g = ProjectionGeometry::for_image(128);
        assert_eq!(g.n_angles(), 128);
        assert_eq!(g.n_bins, 182);
    }

    #[test]
    fn backprojection_is_adjoint() {
        let p = Projector::for_image(24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..24 * 24).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..p.geometry().n_rays()).map(|_| rng.random::<f64>()).collect();
        let ax = p.forward_raw(&x).unwrap();
        let aty = p.back(&Sinogram { n_angles: 24, n_bins: p.geometry().n_bins, data: y.clone() }).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn mass_is_preserved_per_angle() {
        // Each view is a Riemann sum over the bilinear footprint; for a
        // smooth object every view carries the same total.
        let n = 32;
        let mut img = Image::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                let r2 = (x as f64 - 14.3).powi(2) + (y as f64 - 17.6).powi(2);
                img.set(x, y, (-r2 / 8.0).exp());
            }
        }
        let mass: f64 = img.data.iter().sum();
        let p = Projector::for_image(n).unwrap();
        let sino = p.forward(&img).unwrap();
        for a in 0..sino.n_angles {
            let total: f64 = sino.data[a * sino.n_bins..(a + 1) * sino.n_bins].iter().sum();
            assert!((total - mass).abs() < 1e-3 * mass, "angle {a}: {total} vs {mass}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = Projector::for_image(16).unwrap();
        assert!(p.forward(&Image::zeros(8, 8)).is_err());
    }
}
