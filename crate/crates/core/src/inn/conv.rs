//! Shape-preserving 3×3 convolution (stride 1, zero padding 1) on
//! channel-major `[c][y][x]` buffers.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    /// Offset of the `[cout][cin][3][3]` weights in the flat parameter vector.
    pub weight: usize,
    /// Offset of the `[cout]` biases.
    pub bias: usize,
}

impl Conv {
    pub fn n_weights(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub fn forward(&self, theta: &[f64], input: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let hw = h * w;
        debug_assert_eq!(input.len(), self.cin * hw);
        debug_assert_eq!(out.len(), self.cout * hw);
        let weights = &theta[self.weight..self.weight + self.n_weights()];
        for o in 0..self.cout {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.fill(theta[self.bias + o]);
            for i in 0..self.cin {
                let src = &input[i * hw..(i + 1) * hw];
                for k in 0..9 {
                    let wv = weights[(o * self.cin + i) * 9 + k];
                    if wv != 0.0 {
                        shifted_axpy(wv, src, dst, h, w, k / 3, k % 3);
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested, the
    /// input gradient into `grad_in`.
    pub fn backward(
        &self,
        theta: &[f64],
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grad: &mut [f64],
        grad_in: Option<&mut [f64]>,
    ) {
        let hw = h * w;
        for o in 0..self.cout {
            let g = &grad_out[o * hw..(o + 1) * hw];
            grad[self.bias + o] += g.iter().sum::<f64>();
            for i in 0..self.cin {
                let src = &input[i * hw..(i + 1) * hw];
                for k in 0..9 {
                    grad[self.weight + (o * self.cin + i) * 9 + k] += shifted_dot(g, src, h, w, k / 3, k % 3);
                }
            }
        }
        if let Some(gin) = grad_in {
            let weights = &theta[self.weight..self.weight + self.n_weights()];
            for o in 0..self.cout {
                let g = &grad_out[o * hw..(o + 1) * hw];
                for i in 0..self.cin {
                    let dst = &mut gin[i * hw..(i + 1) * hw];
                    for k in 0..9 {
                        let wv = weights[(o * self.cin + i) * 9 + k];
                        if wv != 0.0 {
                            shifted_axpy_transpose(wv, g, dst, h, w, k / 3, k % 3);
                        }
                    }
                }
            }
        }
    }
}

// Valid output rows/cols for kernel tap (ky, kx): reading input at
// (y + ky − 1, x + kx − 1).
#[inline]
fn span(n: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

/// `dst[y][x] += a · src[y+ky−1][x+kx−1]`
#[inline]
fn shifted_axpy(a: f64, src: &[f64], dst: &mut [f64], h: usize, w: usize, ky: usize, kx: usize) {
    let (y0, y1) = span(h, ky);
    let (x0, x1) = span(w, kx);
    for y in y0..y1 {
        let sy = y + ky - 1;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += a * sv;
        }
    }
}

/// `dst[y+ky−1][x+kx−1] += a · src[y][x]`
#[inline]
fn shifted_axpy_transpose(a: f64, src: &[f64], dst: &mut [f64], h: usize, w: usize, ky: usize, kx: usize) {
    let (y0, y1) = span(h, ky);
    let (x0, x1) = span(w, kx);
    for y in y0..y1 {
        let dy = y + ky - 1;
        let s = &src[y * w + x0..y * w + x1];
        let d = &mut dst[dy * w + x0 + kx - 1..dy * w + x1 + kx - 1];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += a * sv;
        }
    }
}

/// `Σ g[y][x] · src[y+ky−1][x+kx−1]`
#[inline]
fn shifted_dot(g: &[f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let (y0, y1) = span(h, ky);
    let (x0, x1) = span(w, kx);
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = y + ky - 1;
        let a = &g[y * w + x0..y * w + x1];
        let b = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
        acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct definition with explicit bounds checks.
    fn reference(conv: &Conv, theta: &[f64], input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; conv.cout * h * w];
        for o in 0..conv.cout {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = theta[conv.bias + o];
                    for i in 0..conv.cin {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sx >= 0 && sy < h as i64 && sx < w as i64 {
                                    let wi = conv.weight + ((o * conv.cin + i) * 9) + (ky * 3 + kx) as usize;
                                    acc += theta[wi] * input[i * h * w + (sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[o * h * w + (y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn setup() -> (Conv, Vec<f64>, Vec<f64>) {
        let conv = Conv { cin: 2, cout: 3, weight: 0, bias: 54 };
        let theta: Vec<f64> = (0..57).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let input: Vec<f64> = (0..2 * 5 * 4).map(|i| ((i * 13 % 11) as f64 - 5.0) / 3.0).collect();
        (conv, theta, input)
    }

    #[test]
    fn matches_direct_convolution() {
        let (conv, theta, input) = setup();
        let mut out = vec![0.0; 3 * 20];
        conv.forward(&theta, &input, 5, 4, &mut out);
        let r = reference(&conv, &theta, &input, 5, 4);
        for (a, b) in out.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <g, J·v> for linear maps equals the accumulated gradient pairing.
        let (conv, theta, input) = setup();
        let g: Vec<f64> = (0..60).map(|i| ((i * 7 % 5) as f64 - 2.0) / 4.0).collect();
        let mut grad = vec![0.0; theta.len()];
        let mut gin = vec![0.0; input.len()];
        conv.backward(&theta, &input, &g, 5, 4, &mut grad, Some(&mut gin));
        let loss = |th: &[f64], x: &[f64]| reference(&conv, th, x, 5, 4).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-6;
        for p in [0, 7, 30, 55] {
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a[p] += h;
            b[p] -= h;
            assert!(((loss(&a, &input) - loss(&b, &input)) / (2.0 * h) - grad[p]).abs() < 1e-6);
        }
        for p in [0, 9, 21, 39] {
            let (mut a, mut b) = (input.clone(), input.clone());
            a[p] += h;
            b[p] -= h;
            assert!(((loss(&theta, &a) - loss(&theta, &b)) / (2.0 * h) - gin[p]).abs() < 1e-6);
        }
    }
}
