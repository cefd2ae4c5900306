use approx::assert_relative_eq;
use petkin_core::kinetics::{
    beta_roots, ct_analytic, feng_input, feng_input_raw, uniform_grid, FengCoefficients, FrameModel, FrameSchedule, InputFunction, KineticParams,
    Tracer, DEFAULT_STEPS_PER_MIN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fdg() -> InputFunction {
    InputFunction::feng(FengCoefficients::fdg()).unwrap()
}

// Classical RK4 on dC1/dt = K1·Cp − (k2+k3)·C1 + k4·C2, dC2/dt = k3·C1 − k4·C2,
// with the input evaluated analytically at the half steps.
fn rk4_tissue(p: &KineticParams, c: &FengCoefficients, end: f64, dt: f64) -> Vec<f64> {
    let cp = |t: f64| feng_input_raw(c, t).max(0.0);
    let f = |t: f64, y: [f64; 2]| [p.k1 * cp(t) - (p.k2 + p.k3) * y[0] + p.k4 * y[1], p.k3 * y[0] - p.k4 * y[1]];
    let steps = (end / dt).round() as usize;
    let mut y = [0.0, 0.0];
    let mut out = vec![0.0];
    for i in 0..steps {
        let t = i as f64 * dt;
        let k1 = f(t, y);
        let k2 = f(t + dt / 2.0, [y[0] + dt / 2.0 * k1[0], y[1] + dt / 2.0 * k1[1]]);
        let k3 = f(t + dt / 2.0, [y[0] + dt / 2.0 * k2[0], y[1] + dt / 2.0 * k2[1]]);
        let k4 = f(t + dt, [y[0] + dt * k3[0], y[1] + dt * k3[1]]);
        for j in 0..2 {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(y[0] + y[1]);
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng, reversible: bool) -> KineticParams {
    KineticParams::new(
        rng.random_range(0.05..0.6),
        rng.random_range(0.05..0.5),
        rng.random_range(0.01..0.2),
        if reversible { rng.random_range(0.005..0.1) } else { 0.0 },
        0.0,
    )
}

#[test]
fn analytic_matches_runge_kutta() {
    let c = FengCoefficients::fdg();
    let cp = fdg();
    let grid = uniform_grid(60.0, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let p = random_params(&mut rng, i % 2 == 0);
        let analytic = ct_analytic(&p, &cp, &grid).unwrap();
        let oracle = rk4_tissue(&p, &c, 60.0, 1.0 / 60.0);
        assert_eq!(oracle.len(), grid.len());
        let peak = oracle.iter().copied().fold(0.0, f64::max);
        for (a, o) in analytic.values.iter().zip(&oracle) {
            if *o > 0.01 * peak {
                worst = worst.max((a - o).abs() / o);
            }
        }
    }
    assert!(worst <= 5e-3, "worst relative error {worst}");
}

// Adaptive Simpson on ∫₀ᵗ f.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), eps, 40)
}

#[test]
fn one_tissue_limit_matches_quadrature() {
    let c = FengCoefficients::fdg();
    let p = KineticParams::new(0.3, 0.15, 0.0, 0.0, 0.0);
    let grid = uniform_grid(60.0, 60);
    let ct = ct_analytic(&p, &fdg(), &grid).unwrap();
    for t in [0.5, 2.0, 10.0, 35.0, 60.0] {
        let f = |tau: f64| p.k1 * (-p.k2 * (t - tau)).exp() * feng_input(&c, tau).unwrap();
        let expected = simpson(&f, 0.0, t, 1e-10);
        let got = ct.at(t).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-3);
    }
}

#[test]
fn response_is_linear_in_the_input() {
    let c = FengCoefficients::fdg();
    let grid = uniform_grid(60.0, 30);
    let p = KineticParams::new(0.2, 0.3, 0.1, 0.02, 0.0);
    let base = ct_analytic(&p, &fdg(), &grid).unwrap();
    let scaled_coeffs = FengCoefficients { a1: 2.5 * c.a1, a2: 2.5 * c.a2, a3: 2.5 * c.a3, ..c };
    let scaled = ct_analytic(&p, &InputFunction::feng(scaled_coeffs).unwrap(), &grid).unwrap();
    for (a, b) in base.values.iter().zip(&scaled.values) {
        assert_relative_eq!(2.5 * a, *b, max_relative = 1e-12, epsilon = 1e-300);
    }
}

#[test]
fn response_is_additive_in_the_input() {
    let grid = uniform_grid(60.0, 30);
    let times: Vec<f64> = (0..=120).map(|i| i as f64 * 0.5).collect();
    let a: Vec<f64> = times.iter().map(|t| 10.0 * (-0.1 * t).exp() * t).collect();
    let b: Vec<f64> = times.iter().map(|t| 3.0 + (0.3 * t).sin()).collect();
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let p = KineticParams::new(0.2, 0.3, 0.1, 0.02, 0.0);
    let ct = |v: Vec<f64>| ct_analytic(&p, &InputFunction::sampled(times.clone(), v).unwrap(), &grid).unwrap().values;
    let (ca, cb, cs) = (ct(a), ct(b), ct(sum));
    for i in 0..cs.len() {
        assert_relative_eq!(ca[i] + cb[i], cs[i], max_relative = 1e-10, epsilon = 1e-12);
    }
}

#[test]
fn feng_input_peaks_where_its_derivative_vanishes() {
    let c = FengCoefficients::fdg();
    // d/dt Cp = (A1 − λ1(A1 t − A2 − A3))e^(−λ1 t) − λ2 A2 e^(−λ2 t) − λ3 A3 e^(−λ3 t)
    let d = |t: f64| {
        (c.a1 - c.lambda1 * (c.a1 * t - c.a2 - c.a3)) * (-c.lambda1 * t).exp() - c.lambda2 * c.a2 * (-c.lambda2 * t).exp() - c.lambda3 * c.a3 * (-c.lambda3 * t).exp()
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    assert!(d(lo) > 0.0 && d(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_peak = 0.5 * (lo + hi);
    let sampled = (0..=2000)
        .map(|i| i as f64 * 1e-3)
        .max_by(|a, b| feng_input(&c, *a).unwrap().total_cmp(&feng_input(&c, *b).unwrap()))
        .unwrap();
    assert!((sampled - t_peak).abs() <= 1e-3, "{sampled} vs {t_peak}");
    assert!(feng_input(&c, t_peak).unwrap() > feng_input(&c, 60.0).unwrap());
}

#[test]
fn frames_of_a_blood_free_voxel_are_decay_weighted_tissue_integrals() {
    let tracer = Tracer::from_half_life("FDG", 109.77, false).unwrap();
    let schedule = FrameSchedule::standard_18();
    let model = FrameModel::new(&fdg(), &tracer, &schedule, DEFAULT_STEPS_PER_MIN).unwrap();
    let p = KineticParams::new(0.1, 0.12, 0.06, 0.0, 0.0);
    let frames = model.frames(&p).unwrap();
    let ct = model.tissue_curve(&p).unwrap();
    let lambda = tracer.decay_constant;
    for (k, &(ts, te)) in schedule.frames().iter().enumerate() {
        let f = |t: f64| ct.at(t).unwrap() * (-lambda * t).exp();
        let expected = simpson(&f, ts, te, 1e-9);
        assert_relative_eq!(frames[k], expected, max_relative = 1e-4);
    }
}

proptest! {
    #[test]
    fn roots_satisfy_vieta(k2 in 0.0f64..2.0, k3 in 0.0f64..2.0, k4 in 0.0f64..2.0) {
        let p = KineticParams::new(0.1, k2, k3, k4, 0.0);
        let (b1, b2) = beta_roots(&p).unwrap();
        prop_assert!(b1 <= b2 && b1 >= 0.0);
        prop_assert!((b1 + b2 - (k2 + k3 + k4)).abs() <= 1e-12 * (1.0 + k2 + k3 + k4));
        prop_assert!((b1 * b2 - k2 * k4).abs() <= 1e-12 * (1.0 + k2 * k4 + (k2 + k3 + k4).powi(2)));
    }

    #[test]
    fn tissue_curve_is_nonnegative_and_bounded_by_inflow(k1 in 0.01f64..1.0, k2 in 0.01f64..1.0, k3 in 0.0f64..0.5, k4 in 0.0f64..0.2) {
        let p = KineticParams::new(k1, k2, k3, k4, 0.0);
        let grid = uniform_grid(60.0, 60);
        let ct = ct_analytic(&p, &fdg(), &grid).unwrap();
        let c = FengCoefficients::fdg();
        // Closed-form ∫₀ᵗ Cp.
        let integral = |t: f64| {
            let (l1, l2, l3) = (c.lambda1, c.lambda2, c.lambda3);
            c.a1 / (l1 * l1) * (1.0 - (-l1 * t).exp() * (1.0 + l1 * t)) - (c.a2 + c.a3) * (1.0 - (-l1 * t).exp()) / l1
                + c.a2 * (1.0 - (-l2 * t).exp()) / l2
                + c.a3 * (1.0 - (-l3 * t).exp()) / l3
        };
        // C_T(t) ≤ K1·∫₀ᵗ Cp since both compartments only lose tracer to the plasma.
        for (t, v) in grid.iter().zip(&ct.values).step_by(30) {
            prop_assert!(*v >= 0.0);
            prop_assert!(*v <= k1 * integral(*t) * (1.0 + 1e-3) + 1e-12, "t {} ct {} bound {}", t, v, k1 * integral(*t));
        }
    }
}
