use super::conv::Conv;

/// Stack of 3×3 convolutions with leaky-rectifier activations between them;
/// the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Subnet {
    pub layers: Vec<Conv>,
    pub slope: f64,
}

/// Inputs of every layer plus the pre-activations of the hidden layers.
#[derive(Clone, Debug, Default)]
pub(crate) struct SubnetCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Subnet {
    pub fn forward(&self, theta: &[f64], input: &[f64], h: usize, w: usize, cache: Option<&mut SubnetCache>) -> Vec<f64> {
        let hw = h * w;
        let mut store = cache;
        if let Some(c) = store.as_deref_mut() {
            c.inputs.clear();
            c.pre.clear();
        }
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, conv) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; conv.cout * hw];
            conv.forward(theta, &x, h, w, &mut z);
            let next = if l < last {
                let a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { self.slope * v }).collect();
                if let Some(c) = store.as_deref_mut() {
                    c.pre.push(z);
                }
                a
            } else {
                z
            };
            if let Some(c) = store.as_deref_mut() {
                c.inputs.push(std::mem::replace(&mut x, next));
            } else {
                x = next;
            }
        }
        x
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients into `grad`
    /// and returning the gradient with respect to the subnet input.
    pub fn backward(&self, theta: &[f64], cache: &SubnetCache, grad_out: &[f64], h: usize, w: usize, grad: &mut [f64]) -> Vec<f64> {
        let hw = h * w;
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let conv = &self.layers[l];
            if l < last {
                for (gv, &z) in g.iter_mut().zip(&cache.pre[l]) {
                    if z <= 0.0 {
                        *gv *= self.slope;
                    }
                }
            }
            let mut gin = vec![0.0; conv.cin * hw];
            conv.backward(theta, &cache.inputs[l], &g, h, w, grad, Some(&mut gin));
            g = gin;
        }
        g
    }
}
