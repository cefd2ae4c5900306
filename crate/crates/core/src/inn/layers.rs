use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

use super::conv::Conv;
use super::subnet::{Subnet, SubnetCache};
use super::FeatureMap;

/// `σ·tanh(z/σ)`: smooth bound of the log-scale to `(−σ, σ)`.
pub fn clamp_scale(z: f64, sigma: f64) -> f64 {
    sigma * (z / sigma).tanh()
}

/// Affine coupling with an additive update of the first half:
/// `n₁ = m₁ + r(m₂)`, `n₂ = m₂ ⊙ exp(clamp(s(n₁))) + t(n₁)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CouplingSpec {
    pub channels: usize,
    pub split: usize,
    pub sigma: f64,
    pub r: Subnet,
    pub s: Subnet,
    pub t: Subnet,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct CouplingCache {
    r: SubnetCache,
    s: SubnetCache,
    t: SubnetCache,
    /// Raw scale-subnet output.
    s_raw: Vec<f64>,
    /// Second-half input (forward) or output (inverse).
    m2: Vec<f64>,
}

impl CouplingSpec {
    pub fn forward(&self, theta: &[f64], m: &[f64], h: usize, w: usize, cache: Option<&mut CouplingCache>) -> Vec<f64> {
        let hw = h * w;
        let (m1, m2) = m.split_at(self.split * hw);
        let mut c = cache;
        let r = self.r.forward(theta, m2, h, w, c.as_deref_mut().map(|c| &mut c.r));
        let n1: Vec<f64> = m1.iter().zip(&r).map(|(a, b)| a + b).collect();
        let s_raw = self.s.forward(theta, &n1, h, w, c.as_deref_mut().map(|c| &mut c.s));
        let t = self.t.forward(theta, &n1, h, w, c.as_deref_mut().map(|c| &mut c.t));
        let mut out = n1;
        out.extend(m2.iter().zip(&s_raw).zip(&t).map(|((&x, &s), &t)| x * clamp_scale(s, self.sigma).exp() + t));
        if let Some(c) = c {
            c.s_raw = s_raw;
            c.m2 = m2.to_vec();
        }
        out
    }

    pub fn inverse(&self, theta: &[f64], n: &[f64], h: usize, w: usize, cache: Option<&mut CouplingCache>) -> Vec<f64> {
        let hw = h * w;
        let (n1, n2) = n.split_at(self.split * hw);
        let mut c = cache;
        let s_raw = self.s.forward(theta, n1, h, w, c.as_deref_mut().map(|c| &mut c.s));
        let t = self.t.forward(theta, n1, h, w, c.as_deref_mut().map(|c| &mut c.t));
        let m2: Vec<f64> = n2.iter().zip(&s_raw).zip(&t).map(|((&y, &s), &t)| (y - t) * (-clamp_scale(s, self.sigma)).exp()).collect();
        let r = self.r.forward(theta, &m2, h, w, c.as_deref_mut().map(|c| &mut c.r));
        let mut out: Vec<f64> = n1.iter().zip(&r).map(|(a, b)| a - b).collect();
        out.extend_from_slice(&m2);
        if let Some(c) = c {
            c.s_raw = s_raw;
            c.m2 = m2;
        }
        out
    }

    /// Gradient through [`Self::forward`]: takes `∂L/∂n`, returns `∂L/∂m`.
    pub fn backward_forward(&self, theta: &[f64], cache: &CouplingCache, g_n: &[f64], h: usize, w: usize, grad: &mut [f64]) -> Vec<f64> {
        let hw = h * w;
        let (g_n1, g_n2) = g_n.split_at(self.split * hw);
        let mut g_m2 = Vec::with_capacity(g_n2.len());
        let mut g_sraw = Vec::with_capacity(g_n2.len());
        for ((&g, &s), &x) in g_n2.iter().zip(&cache.s_raw).zip(&cache.m2) {
            let th = (s / self.sigma).tanh();
            let e = (self.sigma * th).exp();
            g_m2.push(g * e);
            g_sraw.push(g * x * e * (1.0 - th * th));
        }
        let mut g_n1 = g_n1.to_vec();
        add_into(&mut g_n1, &self.t.backward(theta, &cache.t, g_n2, h, w, grad));
        add_into(&mut g_n1, &self.s.backward(theta, &cache.s, &g_sraw, h, w, grad));
        add_into(&mut g_m2, &self.r.backward(theta, &cache.r, &g_n1, h, w, grad));
        let mut out = g_n1;
        out.extend_from_slice(&g_m2);
        out
    }

    /// Gradient through [`Self::inverse`]: takes `∂L/∂m`, returns `∂L/∂n`.
    pub fn backward_inverse(&self, theta: &[f64], cache: &CouplingCache, g_m: &[f64], h: usize, w: usize, grad: &mut [f64]) -> Vec<f64> {
        let hw = h * w;
        let (g_m1, g_m2) = g_m.split_at(self.split * hw);
        // m₁ = n₁ − r(m₂)
        let neg: Vec<f64> = g_m1.iter().map(|g| -g).collect();
        let mut g_m2 = g_m2.to_vec();
        add_into(&mut g_m2, &self.r.backward(theta, &cache.r, &neg, h, w, grad));
        // m₂ = (n₂ − t)·exp(−clamp(s))
        let mut g_n2 = Vec::with_capacity(g_m2.len());
        let mut g_t = Vec::with_capacity(g_m2.len());
        let mut g_sraw = Vec::with_capacity(g_m2.len());
        for ((&g, &s), &x) in g_m2.iter().zip(&cache.s_raw).zip(&cache.m2) {
            let th = (s / self.sigma).tanh();
            let e = (-self.sigma * th).exp();
            g_n2.push(g * e);
            g_t.push(-g * e);
            g_sraw.push(-g * x * (1.0 - th * th));
        }
        let mut g_n1 = g_m1.to_vec();
        add_into(&mut g_n1, &self.t.backward(theta, &cache.t, &g_t, h, w, grad));
        add_into(&mut g_n1, &self.s.backward(theta, &cache.s, &g_sraw, h, w, grad));
        g_n1.extend_from_slice(&g_n2);
        g_n1
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// `out[i][p] = Σ_j m[i][j]·x[j][p]` for a row-major `c×c` matrix.
pub(crate) fn channel_mix(m: &[f64], x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for i in 0..c {
        let dst = &mut out[i * hw..(i + 1) * hw];
        for j in 0..c {
            let a = m[i * c + j];
            if a != 0.0 {
                for (d, s) in dst.iter_mut().zip(&x[j * hw..(j + 1) * hw]) {
                    *d += a * s;
                }
            }
        }
    }
    out
}

/// `out[i][j] = Σ_p g[i][p]·x[j][p]`
pub(crate) fn channel_outer(g: &[f64], x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            out[i * c + j] = g[i * hw..(i + 1) * hw].iter().zip(&x[j * hw..(j + 1) * hw]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

pub(crate) fn transpose(m: &[f64], c: usize) -> Vec<f64> {
    let mut t = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            t[j * c + i] = m[i * c + j];
        }
    }
    t
}

pub(crate) const MIN_ABS_DET: f64 = 1e-8;

/// Inverse of a row-major `c×c` matrix, rejecting near-singular ones.
pub(crate) fn checked_inverse(m: &[f64], c: usize) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(c, c, m);
    let det = mat.determinant();
    if !(det.abs() >= MIN_ABS_DET) {
        return Err(invalid(format!("mixing matrix is near-singular (|det| = {:.3e})", det.abs())));
    }
    let inv = mat.try_inverse().ok_or_else(|| invalid("mixing matrix is not invertible"))?;
    Ok((0..c * c).map(|k| inv[(k / c, k % c)]).collect())
}

/// Row-major random orthogonal matrix (Q factor of a Gaussian matrix).
pub(crate) fn random_orthogonal<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Vec<f64> {
    let g = DMatrix::from_fn(c, c, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    (0..c * c).map(|k| q[(k / c, k % c)]).collect()
}

/// Standalone invertible 1×1 channel mixing `y = W·x` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingLayer {
    channels: usize,
    w: Vec<f64>,
    w_inv: Vec<f64>,
}

impl MixingLayer {
    /// `w` is row-major `c×c`.
    pub fn new(w: Vec<f64>, channels: usize) -> Result<Self> {
        if w.len() != channels * channels || channels == 0 {
            return Err(Error::Shape(format!("mixing matrix needs {0}x{0} entries", channels)));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mixing matrix must be finite"));
        }
        let w_inv = checked_inverse(&w, channels)?;
        Ok(Self { channels, w, w_inv })
    }

    pub fn identity(channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels];
        (0..channels).for_each(|i| w[i * channels + i] = 1.0);
        Self { channels, w: w.clone(), w_inv: w }
    }

    pub fn orthogonal<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        Self::new(random_orthogonal(channels, rng), channels)
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn inverse_weights(&self) -> &[f64] {
        &self.w_inv
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        x.expect_channels(self.channels)?;
        Ok(x.with_data(channel_mix(&self.w, &x.data, self.channels, x.pixels())))
    }

    pub fn inverse(&self, y: &FeatureMap) -> Result<FeatureMap> {
        y.expect_channels(self.channels)?;
        Ok(y.with_data(channel_mix(&self.w_inv, &y.data, self.channels, y.pixels())))
    }
}

/// Standalone coupling layer owning its subnet parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub(crate) spec: CouplingSpec,
    pub(crate) theta: Vec<f64>,
}

/// Sizes of one coupling layer's subnets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubnetShape {
    pub layers: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
}

impl CouplingLayer {
    /// Random hidden layers, zero final layers: starts as the identity map.
    pub fn new<R: Rng + ?Sized>(channels: usize, split: usize, shape: SubnetShape, sigma: f64, rng: &mut R) -> Result<Self> {
        let mut alloc = Allocator::default();
        let spec = alloc.coupling(channels, split, shape, sigma, "")?;
        let mut theta = vec![0.0; alloc.len];
        alloc.init(&mut theta, rng);
        Ok(Self { spec, theta })
    }

    /// Subnets that output the given constants everywhere (one linear
    /// layer with zero weights and constant bias).
    pub fn constant(channels: usize, split: usize, s: f64, t: f64, r: f64, sigma: f64) -> Result<Self> {
        let shape = SubnetShape { layers: 1, hidden: 1, leaky_slope: 0.01 };
        let mut alloc = Allocator::default();
        let spec = alloc.coupling(channels, split, shape, sigma, "")?;
        let mut theta = vec![0.0; alloc.len];
        for (net, v) in [(&spec.s, s), (&spec.t, t), (&spec.r, r)] {
            let conv = net.layers[0];
            theta[conv.bias..conv.bias + conv.cout].fill(v);
        }
        Ok(Self { spec, theta })
    }

    pub fn split(&self) -> usize {
        self.spec.split
    }

    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn forward(&self, m: &FeatureMap) -> Result<FeatureMap> {
        m.expect_channels(self.spec.channels)?;
        m.check_finite()?;
        Ok(m.with_data(self.spec.forward(&self.theta, &m.data, m.height, m.width, None)))
    }

    pub fn inverse(&self, n: &FeatureMap) -> Result<FeatureMap> {
        n.expect_channels(self.spec.channels)?;
        n.check_finite()?;
        Ok(n.with_data(self.spec.inverse(&self.theta, &n.data, n.height, n.width, None)))
    }
}

/// Parameter tensor in the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Orthogonal(usize),
    /// He-normal with the given fan-in.
    He(usize),
    Zero,
}

/// Lays out tensors in the flat parameter vector.
#[derive(Clone, Debug, Default)]
pub(crate) struct Allocator {
    pub len: usize,
    pub tensors: Vec<TensorInfo>,
    inits: Vec<Init>,
}

impl Allocator {
    pub fn take(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.len;
        let info = TensorInfo { name, offset, shape };
        self.len += info.len();
        self.tensors.push(info);
        self.inits.push(init);
        offset
    }

    fn subnet(&mut self, cin: usize, cout: usize, shape: SubnetShape, prefix: &str) -> Subnet {
        let mut layers = Vec::with_capacity(shape.layers);
        let mut c = cin;
        for l in 0..shape.layers {
            let last = l + 1 == shape.layers;
            let out = if last { cout } else { shape.hidden };
            let init = if last { Init::Zero } else { Init::He(c * 9) };
            let weight = self.take(format!("{prefix}conv{l}.weight"), vec![out, c, 3, 3], init);
            let bias = self.take(format!("{prefix}conv{l}.bias"), vec![out], Init::Zero);
            layers.push(Conv { cin: c, cout: out, weight, bias });
            c = out;
        }
        Subnet { layers, slope: shape.leaky_slope }
    }

    pub fn coupling(&mut self, channels: usize, split: usize, shape: SubnetShape, sigma: f64, prefix: &str) -> Result<CouplingSpec> {
        if split == 0 || split >= channels {
            return Err(invalid(format!("coupling split must be in 1..{channels}, got {split}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("scale clamp must be > 0, got {sigma}")));
        }
        if shape.layers == 0 || shape.hidden == 0 {
            return Err(invalid("subnets need at least one layer and one hidden channel"));
        }
        let rest = channels - split;
        Ok(CouplingSpec {
            channels,
            split,
            sigma,
            r: self.subnet(rest, split, shape, &format!("{prefix}r.")),
            s: self.subnet(split, rest, shape, &format!("{prefix}s.")),
            t: self.subnet(split, rest, shape, &format!("{prefix}t.")),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, theta: &mut [f64], rng: &mut R) {
        for (info, init) in self.tensors.iter().zip(&self.inits) {
            let dst = &mut theta[info.range()];
            match *init {
                Init::Zero => dst.fill(0.0),
                Init::He(fan_in) => {
                    let sd = (2.0 / fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = { let z: f64 = StandardNormal.sample(rng); sd * z });
                }
                Init::Orthogonal(c) => dst.copy_from_slice(&random_orthogonal(c, rng)),
            }
        }
    }
}
