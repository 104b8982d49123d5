use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MindError, Result};
use crate::linalg::{axpy, Matrix};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(out, in)`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn uniform<R: Rng + ?Sized>(input: usize, output: usize, bound: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(input, output);
        for w in d.weights.as_mut_slice() {
            *w = rng.random_range(-bound..=bound);
        }
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.matvec(x);
        axpy(1.0, &self.bias, &mut y);
        y
    }
}

/// ReLU MLP shared by all interest capsules. Every layer but the last is
/// followed by a rectifier; the last is linear so representations can take
/// either sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations of one tower evaluation.
#[derive(Debug, Clone)]
pub struct TowerTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tower {
    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden {
            let bound = (6.0 / fan_in as f64).sqrt();
            layers.push(Dense::uniform(fan_in, h, bound, rng));
            fan_in = h;
        }
        let bound = (6.0 / (fan_in + output) as f64).sqrt();
        layers.push(Dense::uniform(fan_in, output, bound, rng));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MindError::shape("tower needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(MindError::shape("tower layer widths do not chain"));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.output_dim()) {
            return Err(MindError::shape("tower bias length differs from layer width"));
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).0
    }

    pub fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, TowerTrace) {
        let mut trace = TowerTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            trace.inputs.push(std::mem::take(&mut h));
            h = if k == last {
                pre.clone()
            } else {
                pre.iter().map(|v| v.max(0.0)).collect()
            };
            trace.pre.push(pre);
        }
        (h, trace)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the tower input.
    pub fn backward(&self, trace: &TowerTrace, grad_out: &[f64], grads: &mut Tower) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k != last {
                for (gi, &p) in g.iter_mut().zip(&trace.pre[k]) {
                    if p <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let gl = &mut grads.layers[k];
            gl.weights.add_outer(1.0, &g, &trace.inputs[k]);
            axpy(1.0, &g, &mut gl.bias);
            g = self.layers[k].weights.matvec_t(&g);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tower = Tower::new(5, &[7, 6], 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let g = vec![0.2, -1.0, 0.7];
        let (_, trace) = tower.forward_traced(&x);
        let mut grads = tower.zeros_like();
        let gx = tower.backward(&trace, &g, &mut grads);
        let h = 1e-6;
        for k in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (dot(&tower.forward(&xp), &g) - dot(&tower.forward(&xm), &g)) / (2.0 * h);
            assert!((fd - gx[k]).abs() < 1e-7, "coord {k}: {fd} vs {}", gx[k]);
        }
        // bias gradient of the output layer is the upstream gradient itself
        assert_eq!(grads.layers[2].bias, g);
    }

    #[test]
    fn rejects_mismatched_layers() {
        assert!(Tower::from_layers(vec![Dense::zeros(3, 4), Dense::zeros(5, 2)]).is_err());
        assert!(Tower::from_layers(vec![]).is_err());
    }
}
