use petkin_core::inn::{CouplingLayer, FeatureMap, InnNetwork, MixingLayer, NetworkConfig, SubnetShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Network with every parameter moved off its initial value, so that no
/// subnet is trivially zero.
fn random_net(cfg: &NetworkConfig, channels: usize, seed: u64, spread: f64) -> InnNetwork {
    let mut net = InnNetwork::new(cfg, channels, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut theta = net.params().to_vec();
    for t in net.tensors() {
        let s = if t.name.ends_with("mix") { 0.05 } else { spread };
        for v in &mut theta[t.range()] {
            *v += s * rng.sample::<f64, _>(StandardNormal);
        }
    }
    net.set_params(theta).unwrap();
    net
}

#[test]
fn coupling_layers_invert() {
    let shape = SubnetShape { layers: 3, hidden: 8, leaky_slope: 0.01 };
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = rng.random_range(2..7);
        let split = rng.random_range(1..channels);
        let mut layer = CouplingLayer::new(channels, split, shape, 2.0, &mut rng).unwrap();
        for v in layer.params_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let x = random_map(&mut rng, channels, 5, 6);
        let y = layer.forward(&x).unwrap();
        assert!(y.max_abs_diff(&x) > 1e-3, "seed {seed}: layer is trivial");
        assert!(layer.inverse(&y).unwrap().max_abs_diff(&x) <= 1e-5, "seed {seed}");
        assert!(layer.forward(&layer.inverse(&x).unwrap()).unwrap().max_abs_diff(&x) <= 1e-5, "seed {seed}");
    }
}

#[test]
fn mixing_layers_invert() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = rng.random_range(1..9);
        let orth = MixingLayer::orthogonal(channels, &mut rng).unwrap();
        let w: Vec<f64> = (0..channels * channels)
            .map(|i| if i % (channels + 1) == 0 { 2.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let general = MixingLayer::new(w, channels).unwrap();
        let x = random_map(&mut rng, channels, 4, 3);
        for layer in [orth, general] {
            assert!(layer.inverse(&layer.forward(&x).unwrap()).unwrap().max_abs_diff(&x) <= 1e-5, "seed {seed}");
        }
    }
}

#[test]
fn networks_invert() {
    for seed in 0..100u64 {
        let blocks = 4 + (seed % 5) as usize;
        let cfg = NetworkConfig { blocks, subnet_layers: 2, hidden: 6, leaky_slope: 0.01, clamp: 2.0 };
        let channels = 4 + (seed % 3) as usize * 2;
        let net = random_net(&cfg, channels, seed, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = random_map(&mut rng, channels, 6, 5);
        let y = net.forward(&x).unwrap();
        assert!(net.inverse(&y).unwrap().max_abs_diff(&x) <= 1e-5, "seed {seed} ({blocks} blocks)");
        assert!(net.forward(&net.inverse(&x).unwrap()).unwrap().max_abs_diff(&x) <= 1e-5, "seed {seed}");
    }
}

#[test]
fn fresh_network_is_the_mixing_product() {
    for seed in 0..20 {
        let cfg = NetworkConfig { blocks: 6, subnet_layers: 3, hidden: 8, ..NetworkConfig::default() };
        let channels = 12;
        let net = InnNetwork::new(&cfg, channels, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, channels, 7, 7);
        let y = net.forward(&x).unwrap();
        let m = net.mixing_product();
        let n = x.pixels();
        let mut worst: f64 = 0.0;
        for i in 0..channels {
            for p in 0..n {
                let expected: f64 = (0..channels).map(|j| m[i * channels + j] * x.data[j * n + p]).sum();
                worst = worst.max((y.data[i * n + p] - expected).abs());
            }
        }
        assert!(worst <= 1e-10, "seed {seed}: {worst}");
    }
}

fn objective(net: &InnNetwork, x: &FeatureMap, weights: &FeatureMap, inverse: bool) -> f64 {
    let y = if inverse { net.inverse(x).unwrap() } else { net.forward(x).unwrap() };
    y.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 || (analytic - numeric).abs() <= 1e-3 * numeric.abs().max(analytic.abs())
}

#[test]
fn gradients_match_finite_differences() {
    let h = 1e-6;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let cfg = NetworkConfig { blocks: rng.random_range(1..4), subnet_layers: rng.random_range(1..4), hidden: rng.random_range(2..6), leaky_slope: 0.1, clamp: 2.0 };
        let channels = rng.random_range(4..7);
        let net = random_net(&cfg, channels, seed, 0.2);
        let (hh, ww) = (rng.random_range(2..5), rng.random_range(2..5));
        let x = random_map(&mut rng, channels, hh, ww);
        let weights = random_map(&mut rng, channels, hh, ww);
        for inverse in [false, true] {
            let (y, tape) = if inverse { net.inverse_tape(&x).unwrap() } else { net.forward_tape(&x).unwrap() };
            assert_eq!(y.data.len(), x.data.len());
            let (g_in, g) = net.backward(&tape, &weights).unwrap();
            for t in net.tensors() {
                let picks: Vec<usize> = (0..4.min(t.len())).map(|_| t.offset + rng.random_range(0..t.len())).collect();
                for i in picks {
                    let mut plus = net.clone();
                    plus.update(|th| th[i] += h).unwrap();
                    let mut minus = net.clone();
                    minus.update(|th| th[i] -= h).unwrap();
                    let fd = (objective(&plus, &x, &weights, inverse) - objective(&minus, &x, &weights, inverse)) / (2.0 * h);
                    assert!(close(g[i], fd), "seed {seed} inverse {inverse} {}[{}]: {} vs {fd}", t.name, i - t.offset, g[i]);
                }
            }
            for _ in 0..4 {
                let i = rng.random_range(0..x.data.len());
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (objective(&net, &xp, &weights, inverse) - objective(&net, &xm, &weights, inverse)) / (2.0 * h);
                assert!(close(g_in.data[i], fd), "seed {seed} inverse {inverse} input[{i}]: {} vs {fd}", g_in.data[i]);
            }
        }
    }
}
