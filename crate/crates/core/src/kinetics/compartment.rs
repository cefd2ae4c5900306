use crate::error::{domain, invalid, Result};

use super::curve::{check_grid, TimeActivityCurve};
use super::input::InputFunction;
use super::params::KineticParams;

/// Largest step (minutes) accepted by the RK4 integrator: one second.
pub const MAX_ODE_STEP: f64 = 1.0 / 60.0;

/// Relative root gap below which the repeated-root kernel is used.
const CONFLUENT_GAP: f64 = 1e-7;

/// Sub-intervals per grid interval in [`ct_analytic`].
const REFINE: usize = 4;

/// Roots `β1 ≤ β2` of `s² − (k2+k3+k4)·s + k2·k4`.
pub fn beta_roots(p: &KineticParams) -> Result<(f64, f64)> {
    let rates = p.rates();
    if rates.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("non-finite rate constant in {p:?}")));
    }
    let (k2, k3, k4) = (p.k2, p.k3, p.k4);
    let sum = k2 + k3 + k4;
    let disc = sum * sum - 4.0 * k2 * k4;
    if disc < 0.0 {
        return Err(domain(format!("complex eigenvalues: (k2+k3+k4)^2 < 4·k2·k4 for {p:?}")));
    }
    // Same quantity without the cancellation of sum² − 4·k2·k4.
    let disc_stable = (k2 - k4) * (k2 - k4) + k3 * k3 + 2.0 * k3 * (k2 + k4);
    let root = if disc_stable >= 0.0 { disc_stable.sqrt() } else { disc.sqrt() };
    let b2 = 0.5 * (sum + root);
    let b1 = if b2 != 0.0 { k2 * k4 / b2 } else { 0.0 };
    Ok((b1.min(b2), b1.max(b2)))
}

/// Tissue curve `C_T = C1 + C2` of the analytic solution at the nodes of
/// `grid`, convolved with the input by trapezoidal quadrature on a grid
/// refined `REFINE`-fold.
pub fn ct_analytic(p: &KineticParams, cp: &InputFunction, grid: &[f64]) -> Result<TimeActivityCurve> {
    check_grid(grid)?;
    if grid[0] != 0.0 {
        return Err(invalid(format!("time grid must start at 0, got {}", grid[0])));
    }
    p.validate()?;
    // The bolus upslope is too steep for 1 s trapezoids; convolve on a
    // refined grid and keep every REFINE-th node.
    let mut fine = Vec::with_capacity((grid.len() - 1) * REFINE + 1);
    fine.push(grid[0]);
    for w in grid.windows(2) {
        for j in 1..=REFINE {
            fine.push(if j == REFINE { w[1] } else { w[0] + (w[1] - w[0]) * j as f64 / REFINE as f64 });
        }
    }
    let (plasma, _) = cp.sample_plasma(&fine)?;
    let values = ct_on_grid(p, &fine, &plasma)?.into_iter().step_by(REFINE).collect();
    Ok(TimeActivityCurve { times: grid.to_vec(), values })
}

/// Same as [`ct_analytic`] for plasma values already sampled on `grid`.
pub fn ct_on_grid(p: &KineticParams, grid: &[f64], plasma: &[f64]) -> Result<Vec<f64>> {
    if grid.len() != plasma.len() {
        return Err(invalid("grid and plasma samples differ in length"));
    }
    if p.k1 == 0.0 {
        return Ok(vec![0.0; grid.len()]);
    }
    let (b1, b2) = beta_roots(p)?;
    let a = p.k3 + p.k4;
    let mut out = if b2 - b1 <= CONFLUENT_GAP * b2 {
        // K1·[(k3+k4−β)·t + 1]·e^(−βt)
        let beta = 0.5 * (b1 + b2);
        let (plain, ramp) = convolve_exp_and_ramp(grid, plasma, beta);
        let c1 = p.k1 * (a - beta);
        plain.iter().zip(&ramp).map(|(i, j)| p.k1 * i + c1 * j).collect::<Vec<_>>()
    } else {
        let w1 = p.k1 * (a - b1) / (b2 - b1);
        let w2 = p.k1 * (b2 - a) / (b2 - b1);
        let i1 = convolve_exp(grid, plasma, b1);
        let i2 = convolve_exp(grid, plasma, b2);
        i1.iter().zip(&i2).map(|(x, y)| w1 * x + w2 * y).collect::<Vec<_>>()
    };
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Trapezoidal convolution `∫₀ᵗ e^(−β(t−τ)) c(τ) dτ` evaluated recursively.
/// Identical to the direct quadrature sum because the kernel factorises
/// across grid steps.
fn convolve_exp(grid: &[f64], c: &[f64], beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    out.push(0.0);
    let mut acc = 0.0;
    let mut last_h = f64::NAN;
    let mut decay = 1.0;
    for n in 1..grid.len() {
        let h = grid[n] - grid[n - 1];
        if h != last_h {
            decay = (-beta * h).exp();
            last_h = h;
        }
        acc = decay * acc + 0.5 * h * (decay * c[n - 1] + c[n]);
        out.push(acc);
    }
    out
}

/// Convolutions with `e^(−βs)` and `s·e^(−βs)`.
fn convolve_exp_and_ramp(grid: &[f64], c: &[f64], beta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut plain = Vec::with_capacity(grid.len());
    let mut ramp = Vec::with_capacity(grid.len());
    plain.push(0.0);
    ramp.push(0.0);
    let (mut i_acc, mut j_acc) = (0.0, 0.0);
    for n in 1..grid.len() {
        let h = grid[n] - grid[n - 1];
        let decay = (-beta * h).exp();
        j_acc = decay * (j_acc + h * i_acc) + 0.5 * h * h * decay * c[n - 1];
        i_acc = decay * i_acc + 0.5 * h * (decay * c[n - 1] + c[n]);
        plain.push(i_acc);
        ramp.push(j_acc);
    }
    (plain, ramp)
}

/// Compartment curves from direct integration of the rate equations.
#[derive(Clone, Debug)]
pub struct CompartmentCurves {
    pub c1: TimeActivityCurve,
    pub c2: TimeActivityCurve,
    pub ct: TimeActivityCurve,
}

/// Classical fixed-step RK4 on the two-compartment ODEs with `C1(0) = C2(0) = 0`.
pub fn compartment_ode_solve(p: &KineticParams, cp: &InputFunction, grid: &[f64]) -> Result<CompartmentCurves> {
    check_grid(grid)?;
    if grid[0] != 0.0 {
        return Err(invalid(format!("time grid must start at 0, got {}", grid[0])));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] - w[0] > MAX_ODE_STEP + 1e-12) {
        return Err(invalid(format!("ODE step {} min exceeds the 1 s limit", w[1] - w[0])));
    }
    p.validate()?;
    if cp.support_end() < grid[grid.len() - 1] - 1e-9 {
        return Err(domain("input function does not cover the time grid"));
    }

    let rhs = |t: f64, c1: f64, c2: f64| {
        let d1 = p.k1 * cp.plasma_at(t) - (p.k2 + p.k3) * c1 + p.k4 * c2;
        let d2 = p.k3 * c1 - p.k4 * c2;
        (d1, d2)
    };

    let n = grid.len();
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for i in 1..n {
        let (t, h) = (grid[i - 1], grid[i] - grid[i - 1]);
        let (y1, y2) = (c1[i - 1], c2[i - 1]);
        let (a1, a2) = rhs(t, y1, y2);
        let (b1, b2) = rhs(t + 0.5 * h, y1 + 0.5 * h * a1, y2 + 0.5 * h * a2);
        let (e1, e2) = rhs(t + 0.5 * h, y1 + 0.5 * h * b1, y2 + 0.5 * h * b2);
        let (f1, f2) = rhs(t + h, y1 + h * e1, y2 + h * e2);
        c1[i] = y1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * e1 + f1);
        c2[i] = y2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * e2 + f2);
    }
    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let c1 = clamp(c1);
    let c2 = clamp(c2);
    let ct = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
    let times = grid.to_vec();
    Ok(CompartmentCurves {
        c1: TimeActivityCurve { times: times.clone(), values: c1 },
        c2: TimeActivityCurve { times: times.clone(), values: c2 },
        ct: TimeActivityCurve { times, values: ct },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{uniform_grid, FengCoefficients};

    fn feng() -> InputFunction {
        InputFunction::feng(FengCoefficients {
            a1: 851.1225,
            a2: 21.8798,
            a3: 20.8113,
            lambda1: 4.133859,
            lambda2: 0.01043449,
            lambda3: 0.1190996,
        })
        .unwrap()
    }

    #[test]
    fn roots_irreversible() {
        let (b1, b2) = beta_roots(&KineticParams::new(0.1, 0.12, 0.06, 0.0, 0.0)).unwrap();
        assert_eq!(b1, 0.0);
        assert!((b2 - 0.18).abs() < 1e-15);
    }

    #[test]
    fn roots_without_binding() {
        let (b1, b2) = beta_roots(&KineticParams::new(0.1, 0.1, 0.0, 0.3, 0.0)).unwrap();
        assert!((b1 - 0.1).abs() < 1e-15);
        assert!((b2 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn roots_reject_complex_case() {
        // Only reachable with a negative rate.
        assert!(beta_roots(&KineticParams::new(0.1, 1.0, -1.5, 1.0, 0.0)).is_err());
    }

    #[test]
    fn zero_inflow_or_input_gives_zero_curve() {
        let grid = uniform_grid(10.0, 60);
        let ct = ct_analytic(&KineticParams::new(0.0, 0.1, 0.05, 0.01, 0.0), &feng(), &grid).unwrap();
        assert!(ct.values.iter().all(|&v| v == 0.0));
        let ct = ct_analytic(&KineticParams::new(0.1, 0.1, 0.05, 0.01, 0.0), &InputFunction::zero(10.0), &grid).unwrap();
        assert!(ct.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_rejects_bad_grid() {
        let p = KineticParams::new(0.1, 0.1, 0.05, 0.01, 0.0);
        assert!(ct_analytic(&p, &feng(), &[]).is_err());
        assert!(ct_analytic(&p, &feng(), &[1.0, 2.0]).is_err());
        assert!(ct_analytic(&KineticParams::new(-0.1, 0.1, 0.0, 0.0, 0.0), &feng(), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_params_give_zero_ode_curves() {
        let grid = uniform_grid(5.0, 60);
        let out = compartment_ode_solve(&KineticParams::default(), &feng(), &grid).unwrap();
        assert!(out.ct.values.iter().chain(&out.c1.values).chain(&out.c2.values).all(|&v| v == 0.0));
    }

    #[test]
    fn ode_rejects_coarse_grid() {
        let grid = uniform_grid(5.0, 30);
        assert!(compartment_ode_solve(&KineticParams::default(), &feng(), &grid).is_err());
    }

    #[test]
    fn confluent_kernel_matches_one_tissue_form() {
        // k3 = 0, k2 = k4: both roots equal k2 and C_T = K1·e^(−k2 t) ⊗ Cp.
        let grid = uniform_grid(30.0, 60);
        let p = KineticParams::new(0.2, 0.15, 0.0, 0.15, 0.0);
        let (b1, b2) = beta_roots(&p).unwrap();
        assert_eq!(b1, b2);
        let ct = ct_analytic(&p, &feng(), &grid).unwrap();
        let one = ct_analytic(&KineticParams::new(0.2, 0.15, 0.0, 0.0, 0.0), &feng(), &grid).unwrap();
        for (a, b) in ct.values.iter().zip(&one.values) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn recursive_convolution_equals_direct_sum() {
        let grid = uniform_grid(2.0, 60);
        let (cp, _) = feng().sample_plasma(&grid).unwrap();
        let beta = 0.37;
        let fast = convolve_exp(&grid, &cp, beta);
        let (plain, ramp) = convolve_exp_and_ramp(&grid, &cp, beta);
        for n in [1usize, 7, 60, 120] {
            let tn = grid[n];
            let f = |j: usize| (-beta * (tn - grid[j])).exp() * cp[j];
            let g = |j: usize| (tn - grid[j]) * (-beta * (tn - grid[j])).exp() * cp[j];
            let direct: f64 = (0..n).map(|i| 0.5 * (grid[i + 1] - grid[i]) * (f(i) + f(i + 1))).sum();
            let direct_ramp: f64 = (0..n).map(|i| 0.5 * (grid[i + 1] - grid[i]) * (g(i) + g(i + 1))).sum();
            assert!((fast[n] - direct).abs() < 1e-12 * direct.max(1.0));
            assert!((plain[n] - direct).abs() < 1e-12 * direct.max(1.0));
            assert!((ramp[n] - direct_ramp).abs() < 1e-12 * direct_ramp.max(1.0));
        }
    }
}
