use serde::{Deserialize, Serialize};

/// Adaptive-moment optimiser state over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { beta1, beta2, epsilon, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// In-place update `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr·sign(g) (up to ε).
        let mut a = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut th = vec![1.0, 1.0, 1.0];
        a.step(&mut th, &[0.5, -2.0, 0.0], 0.1);
        assert!((th[0] - 0.9).abs() < 1e-7 && (th[1] - 1.1).abs() < 1e-7 && th[2] == 1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut th = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * th[0], 8.0 * th[1]];
            a.step(&mut th, &g, 0.05);
        }
        assert!(th[0].abs() < 1e-2 && th[1].abs() < 1e-2);
    }
}
