use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    #[serde(alias = "brain-like")]
    Brain,
    #[serde(alias = "thorax-like")]
    Thorax,
}

impl PhantomKind {
    pub fn default_rois(self) -> usize {
        match self {
            PhantomKind::Brain => 5,
            PhantomKind::Thorax => 3,
        }
    }

    pub fn capacity(self) -> usize {
        structures(self).iter().map(|s| s.label as usize).max().unwrap_or(0)
    }
}

/// Per-voxel region ids; 0 is background and ROIs are numbered `1..=n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u16>,
    n_rois: usize,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} label map needs {} labels, got {}", width * height, labels.len())));
        }
        let n_rois = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0usize; n_rois + 1];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        if let Some(missing) = (1..=n_rois).find(|&r| counts[r] == 0) {
            return Err(invalid(format!("label ids must be contiguous: ROI {missing} has no voxels")));
        }
        Ok(Self { width, height, labels, n_rois })
    }

    /// Imports an external label image; values are rounded to integers.
    pub fn from_image(image: &Image) -> Result<Self> {
        let labels = image
            .data
            .iter()
            .map(|&v| {
                if v.is_finite() && v >= 0.0 && v <= u16::MAX as f64 {
                    Ok(v.round() as u16)
                } else {
                    Err(invalid(format!("invalid label value {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(image.width, image.height, labels)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn roi_mask(&self, roi: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == roi).collect()
    }

    pub fn body_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_rois + 1];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.labels.iter().map(|&l| l as f64).collect() }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    label: u16,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    const fn new(label: u16, cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        Self { label, cx, cy, rx, ry }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (a, b) = ((u - self.cx) / self.rx, (v - self.cy) / self.ry);
        a * a + b * b <= 1.0
    }
}

// Painted in order; later shapes overwrite earlier ones. Coordinates are in
// [-1, 1] with y pointing down.
fn structures(kind: PhantomKind) -> &'static [Ellipse] {
    const BRAIN: [Ellipse; 9] = [
        Ellipse::new(1, 0.0, 0.0, 0.82, 0.92),
        Ellipse::new(2, 0.0, 0.02, 0.62, 0.72),
        Ellipse::new(3, -0.22, 0.05, 0.14, 0.18),
        Ellipse::new(3, 0.22, 0.05, 0.14, 0.18),
        Ellipse::new(4, 0.0, 0.62, 0.34, 0.16),
        Ellipse::new(5, 0.0, -0.16, 0.08, 0.22),
        Ellipse::new(6, -0.36, -0.45, 0.10, 0.10),
        Ellipse::new(7, 0.36, -0.45, 0.10, 0.10),
        Ellipse::new(8, 0.0, 0.36, 0.10, 0.07),
    ];
    const THORAX: [Ellipse; 7] = [
        Ellipse::new(1, 0.0, 0.0, 0.9, 0.62),
        Ellipse::new(2, 0.08, 0.02, 0.22, 0.26),
        Ellipse::new(3, -0.48, -0.02, 0.26, 0.42),
        Ellipse::new(3, 0.52, -0.02, 0.2, 0.4),
        Ellipse::new(4, 0.0, 0.46, 0.1, 0.1),
        Ellipse::new(5, 0.42, 0.4, 0.2, 0.12),
        Ellipse::new(6, -0.45, -0.18, 0.08, 0.08),
    ];
    match kind {
        PhantomKind::Brain => &BRAIN,
        PhantomKind::Thorax => &THORAX,
    }
}

/// Smooth, invertible-looking deformation: small random affine part plus a
/// low-frequency sinusoidal displacement.
struct Warp {
    m: [[f64; 2]; 2],
    shift: [f64; 2],
    amp: f64,
    freq: [f64; 2],
    phase: [f64; 2],
}

impl Warp {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let theta = rng.random_range(-0.05..=0.05);
        let (sx, sy) = (rng.random_range(0.96..=1.04), rng.random_range(0.96..=1.04));
        let (c, s) = (f64::cos(theta), f64::sin(theta));
        Self {
            m: [[c * sx, -s * sx], [s * sy, c * sy]],
            shift: [rng.random_range(-0.02..=0.02), rng.random_range(-0.02..=0.02)],
            amp: amplitude,
            freq: [rng.random_range(0.5..=1.5), rng.random_range(0.5..=1.5)],
            phase: [rng.random_range(0.0..=2.0), rng.random_range(0.0..=2.0)],
        }
    }

    fn identity() -> Self {
        Self { m: [[1.0, 0.0], [0.0, 1.0]], shift: [0.0, 0.0], amp: 0.0, freq: [1.0, 1.0], phase: [0.0, 0.0] }
    }

    fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let pi = std::f64::consts::PI;
        let du = self.amp * (pi * (self.freq[0] * v + self.phase[0])).sin();
        let dv = self.amp * (pi * (self.freq[1] * u + self.phase[1])).sin();
        let (u, v) = (u + du - self.shift[0], v + dv - self.shift[1]);
        (self.m[0][0] * u + self.m[0][1] * v, self.m[1][0] * u + self.m[1][1] * v)
    }
}

/// Default warp amplitude, in voxels of a 128×128 phantom.
const DEFAULT_WARP: f64 = 2.0;

pub fn make_phantom(kind: PhantomKind, size: usize, n_rois: usize, seed: u64) -> Result<LabelMap> {
    make_phantom_with(kind, size, n_rois, seed, DEFAULT_WARP)
}

/// Procedural phantom of `n_rois` nested/adjacent elliptical regions inside a
/// body outline, deformed by a seed-driven smooth warp of up to `warp`
/// voxels (measured at 128×128). `n_rois = 1` yields a single centred disk.
pub fn make_phantom_with(kind: PhantomKind, size: usize, n_rois: usize, seed: u64, warp: f64) -> Result<LabelMap> {
    if size < 16 {
        return Err(invalid(format!("phantom size must be >= 16, got {size}")));
    }
    if n_rois == 0 {
        return Err(invalid("phantom needs at least one ROI"));
    }
    if n_rois > kind.capacity() {
        return Err(invalid(format!("{kind:?} phantom holds at most {} ROIs, asked for {n_rois}", kind.capacity())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deform = if warp > 0.0 { Warp::random(&mut rng, 2.0 * warp / 128.0) } else { Warp::identity() };
    let shapes: Vec<Ellipse> = if n_rois == 1 {
        vec![Ellipse::new(1, 0.0, 0.0, 0.6, 0.6)]
    } else {
        structures(kind).iter().copied().filter(|e| (e.label as usize) <= n_rois).collect()
    };
    let n = size as f64;
    let mut labels = vec![0u16; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / n * 2.0 - 1.0;
            let v = (y as f64 + 0.5) / n * 2.0 - 1.0;
            let (u, v) = deform.apply(u, v);
            for e in &shapes {
                if e.contains(u, v) {
                    labels[y * size + x] = e.label;
                }
            }
        }
    }
    LabelMap::new(size, size, labels)
        .map_err(|_| invalid(format!("{n_rois} ROIs do not all fit a {size}x{size} {kind:?} phantom")))
}
