use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::layers::{channel_mix, channel_outer, checked_inverse, transpose, Allocator, CouplingCache, CouplingSpec, Init, TensorInfo};
use super::{FeatureMap, NetworkConfig};

/// Output channels carrying `(K1, k2, k3, k4)`; the rest are auxiliary.
pub const PARAM_CHANNELS: [usize; 4] = [0, 1, 2, 3];

#[derive(Clone, Debug, PartialEq)]
struct Block {
    /// Offset of the row-major `c×c` mixing matrix.
    mix: usize,
    coupling: CouplingSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Debug, Default)]
struct BlockCache {
    /// Input of the mixing step (forward) or of the inverse mixing step.
    mix_in: Vec<f64>,
    coupling: CouplingCache,
}

/// Activations recorded by a pass, valid only for the parameter version
/// they were recorded with.
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    direction: Direction,
    channels: usize,
    height: usize,
    width: usize,
    blocks: Vec<BlockCache>,
}

impl Tape {
    pub fn direction(&self) -> Direction {
        self.direction
    }
}

/// Everything needed to rebuild a network's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub channels: usize,
    pub split: usize,
    pub config: NetworkConfig,
    pub param_channels: Vec<usize>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug)]
pub struct InnNetwork {
    config: NetworkConfig,
    channels: usize,
    split: usize,
    blocks: Vec<Block>,
    tensors: Vec<TensorInfo>,
    theta: Vec<f64>,
    mix_inv: Vec<Vec<f64>>,
    version: u64,
}

impl InnNetwork {
    /// Orthogonal mixing matrices and identity couplings (zero final subnet layers).
    pub fn new(config: &NetworkConfig, channels: usize, seed: u64) -> Result<Self> {
        config.validate(channels)?;
        if config.blocks > 0 && channels < 2 {
            return Err(invalid("coupling needs at least two channels"));
        }
        let split = channels / 2;
        let mut alloc = Allocator::default();
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let mix = alloc.take(format!("block{b}.mix"), vec![channels, channels], Init::Orthogonal(channels));
            let coupling = alloc.coupling(channels, split, config.subnet_shape(), config.clamp, &format!("block{b}."))?;
            blocks.push(Block { mix, coupling });
        }
        let mut theta = vec![0.0; alloc.len];
        alloc.init(&mut theta, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut net = Self { config: config.clone(), channels, split, blocks, tensors: alloc.tensors, theta, mix_inv: Vec::new(), version: 0 };
        net.refresh_inverses()?;
        Ok(net)
    }

    /// Rebuilds a network from its manifest and flat parameters.
    pub fn from_manifest(manifest: &NetworkManifest, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::new(&manifest.config, manifest.channels, 0)?;
        if net.split != manifest.split || net.tensors != manifest.tensors || manifest.param_channels != PARAM_CHANNELS {
            return Err(Error::Format("checkpoint manifest does not match the network layout".into()));
        }
        net.set_params(theta)?;
        Ok(net)
    }

    pub fn manifest(&self) -> NetworkManifest {
        NetworkManifest {
            channels: self.channels,
            split: self.split,
            config: self.config.clone(),
            param_channels: PARAM_CHANNELS.to_vec(),
            tensors: self.tensors.clone(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    /// Parameter version; bumped on every update so older tapes are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_params(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Shape(format!("network has {} parameters, got {}", self.theta.len(), theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("network parameters must be finite"));
        }
        let old = std::mem::replace(&mut self.theta, theta);
        if let Err(e) = self.refresh_inverses() {
            self.theta = old;
            self.refresh_inverses()?;
            return Err(e);
        }
        Ok(())
    }

    /// Applies an in-place update to the flat parameters.
    pub fn update(&mut self, f: impl FnOnce(&mut [f64])) -> Result<()> {
        let mut theta = self.theta.clone();
        f(&mut theta);
        self.set_params(theta)
    }

    fn refresh_inverses(&mut self) -> Result<()> {
        let c = self.channels;
        self.mix_inv = self.blocks.iter().map(|b| checked_inverse(&self.theta[b.mix..b.mix + c * c], c)).collect::<Result<_>>()?;
        self.version += 1;
        Ok(())
    }

    /// Product `W_k···W_1` of all mixing matrices (row-major).
    pub fn mixing_product(&self) -> Vec<f64> {
        let c = self.channels;
        let mut p = vec![0.0; c * c];
        (0..c).for_each(|i| p[i * c + i] = 1.0);
        for b in &self.blocks {
            p = matmul(&self.theta[b.mix..b.mix + c * c], &p, c);
        }
        p
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        x.expect_channels(self.channels)?;
        x.check_finite()
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(x)?;
        Ok(x.with_data(self.run_forward(&x.data, x.height, x.width, None)))
    }

    pub fn inverse(&self, y: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(y)?;
        Ok(y.with_data(self.run_inverse(&y.data, y.height, y.width, None)))
    }

    pub fn forward_tape(&self, x: &FeatureMap) -> Result<(FeatureMap, Tape)> {
        self.check_input(x)?;
        let mut tape = self.new_tape(Direction::Forward, x);
        let y = self.run_forward(&x.data, x.height, x.width, Some(&mut tape.blocks));
        Ok((x.with_data(y), tape))
    }

    pub fn inverse_tape(&self, y: &FeatureMap) -> Result<(FeatureMap, Tape)> {
        self.check_input(y)?;
        let mut tape = self.new_tape(Direction::Inverse, y);
        let x = self.run_inverse(&y.data, y.height, y.width, Some(&mut tape.blocks));
        Ok((y.with_data(x), tape))
    }

    fn new_tape(&self, direction: Direction, x: &FeatureMap) -> Tape {
        Tape {
            version: self.version,
            direction,
            channels: x.channels,
            height: x.height,
            width: x.width,
            blocks: vec![BlockCache::default(); self.blocks.len()],
        }
    }

    fn run_forward(&self, x: &[f64], h: usize, w: usize, mut caches: Option<&mut Vec<BlockCache>>) -> Vec<f64> {
        let c = self.channels;
        let mut cur = x.to_vec();
        for (i, b) in self.blocks.iter().enumerate() {
            let mixed = channel_mix(&self.theta[b.mix..b.mix + c * c], &cur, c, h * w);
            let cache = caches.as_deref_mut().map(|v| &mut v[i]);
            cur = match cache {
                Some(bc) => {
                    bc.mix_in = std::mem::take(&mut cur);
                    b.coupling.forward(&self.theta, &mixed, h, w, Some(&mut bc.coupling))
                }
                None => b.coupling.forward(&self.theta, &mixed, h, w, None),
            };
        }
        cur
    }

    fn run_inverse(&self, y: &[f64], h: usize, w: usize, mut caches: Option<&mut Vec<BlockCache>>) -> Vec<f64> {
        let c = self.channels;
        let mut cur = y.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let cache = caches.as_deref_mut().map(|v| &mut v[i]);
            cur = match cache {
                Some(bc) => {
                    let m = b.coupling.inverse(&self.theta, &cur, h, w, Some(&mut bc.coupling));
                    let out = channel_mix(&self.mix_inv[i], &m, c, h * w);
                    bc.mix_in = m;
                    out
                }
                None => {
                    let m = b.coupling.inverse(&self.theta, &cur, h, w, None);
                    channel_mix(&self.mix_inv[i], &m, c, h * w)
                }
            };
        }
        cur
    }

    /// Reverse-mode gradient of a pass recorded on `tape`. `upstream` is the
    /// gradient on that pass's output; parameter gradients are accumulated
    /// into `grad` and the gradient on the pass's input is returned.
    pub fn backward_into(&self, tape: &Tape, upstream: &FeatureMap, grad: &mut [f64]) -> Result<FeatureMap> {
        if tape.version != self.version {
            return Err(Error::StaleCache(format!("tape recorded at parameter version {}, network is at {}", tape.version, self.version)));
        }
        if grad.len() != self.theta.len() {
            return Err(Error::Shape(format!("gradient buffer needs {} entries, got {}", self.theta.len(), grad.len())));
        }
        if upstream.channels != tape.channels || upstream.height != tape.height || upstream.width != tape.width {
            return Err(Error::Shape("upstream gradient does not match the recorded pass".into()));
        }
        let (c, h, w) = (self.channels, tape.height, tape.width);
        let hw = h * w;
        let mut g = upstream.data.clone();
        match tape.direction {
            Direction::Forward => {
                for (i, b) in self.blocks.iter().enumerate().rev() {
                    let bc = &tape.blocks[i];
                    let g_mixed = b.coupling.backward_forward(&self.theta, &bc.coupling, &g, h, w, grad);
                    let wm = &self.theta[b.mix..b.mix + c * c];
                    let dw = channel_outer(&g_mixed, &bc.mix_in, c, hw);
                    add_into(&mut grad[b.mix..b.mix + c * c], &dw);
                    g = channel_mix(&transpose(wm, c), &g_mixed, c, hw);
                }
            }
            Direction::Inverse => {
                for (i, b) in self.blocks.iter().enumerate() {
                    let bc = &tape.blocks[i];
                    let inv_t = transpose(&self.mix_inv[i], c);
                    // x = W⁻¹·m  ⇒  ∂W = −W⁻ᵀ·(g·mᵀ)·W⁻ᵀ
                    let d_inv = channel_outer(&g, &bc.mix_in, c, hw);
                    let dw = matmul(&matmul(&inv_t, &d_inv, c), &inv_t, c);
                    for (dst, v) in grad[b.mix..b.mix + c * c].iter_mut().zip(&dw) {
                        *dst -= v;
                    }
                    let g_m = channel_mix(&inv_t, &g, c, hw);
                    g = b.coupling.backward_inverse(&self.theta, &bc.coupling, &g_m, h, w, grad);
                }
            }
        }
        Ok(upstream.with_data(g))
    }

    pub fn backward(&self, tape: &Tape, upstream: &FeatureMap) -> Result<(FeatureMap, Vec<f64>)> {
        let mut grad = vec![0.0; self.theta.len()];
        let g = self.backward_into(tape, upstream, &mut grad)?;
        Ok((g, grad))
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn matmul(a: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for k in 0..c {
            let v = a[i * c + k];
            for j in 0..c {
                out[i * c + j] += v * b[k * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small() -> NetworkConfig {
        NetworkConfig { blocks: 3, subnet_layers: 2, hidden: 4, leaky_slope: 0.01, clamp: 2.0 }
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = InnNetwork::new(&small(), 4, 1).unwrap();
        let x = random_map(4, 3, 3, 2);
        let (y, tape) = net.forward_tape(&x).unwrap();
        net.update(|t| t[0] += 1e-3).unwrap();
        assert!(matches!(net.backward(&tape, &y), Err(Error::StaleCache(_))));
    }

    #[test]
    fn zero_blocks_is_identity() {
        let cfg = NetworkConfig { blocks: 0, ..small() };
        let net = InnNetwork::new(&cfg, 4, 1).unwrap();
        let x = random_map(4, 2, 2, 3);
        assert_eq!(net.forward(&x).unwrap(), x);
        assert_eq!(net.inverse(&x).unwrap(), x);
    }

    #[test]
    fn manifest_roundtrip() {
        let net = InnNetwork::new(&small(), 6, 9).unwrap();
        let back = InnNetwork::from_manifest(&net.manifest(), net.params().to_vec()).unwrap();
        let x = random_map(6, 3, 2, 1);
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        let mut other = net.manifest();
        other.channels = 8;
        assert!(InnNetwork::from_manifest(&other, net.params().to_vec()).is_err());
    }

    #[test]
    fn singular_update_is_rolled_back() {
        let mut net = InnNetwork::new(&small(), 4, 1).unwrap();
        let before = net.params().to_vec();
        assert!(net.update(|t| t[..16].fill(0.0)).is_err());
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let net = InnNetwork::new(&small(), 4, 1).unwrap();
        assert!(net.forward(&random_map(5, 2, 2, 0)).is_err());
    }
}
