//! Behavior-to-interest dynamic routing.
//!
//! Behavior embeddings `e_i` are mapped through one shared bilinear matrix `S`,
//! then `r` rounds of agreement routing group them into `K'` interest capsules:
//!
//! ```text
//! w_i   = softmax_j(b_ij)                 per behavior, over interests
//! z_j   = Σ_i w_ij S e_i                  real behaviors only
//! u_j   = squash(z_j)
//! b_ij += u_jᵀ S e_i
//! ```
//!
//! Initial logits are drawn from `N(0, σ²)`; with equal logits every capsule
//! starts (and stays) identical.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::BehaviorEmbeddings;
use crate::error::{MindError, Result};
use crate::linalg::{axpy, dot, norm, softmax, Matrix};

/// Logit reported for padded behavior rows.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    /// Upper bound `K` on the interest count.
    pub max_interests: usize,
    pub iterations: usize,
    /// Standard deviation of the initial logits.
    pub sigma: f64,
    /// Treat coupling coefficients as constants when differentiating.
    pub detach_couplings: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            max_interests: 4,
            iterations: 3,
            sigma: 1.0,
            detach_couplings: false,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_interests == 0 {
            return Err(MindError::config("max_interests must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(MindError::config("routing iterations must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(MindError::config("routing sigma must be positive and finite"));
        }
        Ok(())
    }
}

/// `max(1, min(K, log2(n)))`, truncated to an integer.
pub fn adaptive_interest_count(num_behaviors: usize, max_interests: usize) -> usize {
    if num_behaviors <= 1 {
        return 1;
    }
    let floor_log2 = (usize::BITS - 1 - num_behaviors.leading_zeros()) as usize;
    floor_log2.min(max_interests).max(1)
}

/// `‖z‖²/(1+‖z‖²) · z/‖z‖`, with `squash(0) = 0`.
pub fn squash(z: &[f64]) -> Vec<f64> {
    let n2 = dot(z, z);
    if n2 == 0.0 {
        return vec![0.0; z.len()];
    }
    let scale = n2 / (1.0 + n2) / n2.sqrt();
    z.iter().map(|v| v * scale).collect()
}

/// Vector-Jacobian product of [`squash`] at `z`.
pub fn squash_backward(z: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n = norm(z);
    if n == 0.0 {
        return vec![0.0; z.len()];
    }
    let n2 = n * n;
    let f = n / (1.0 + n2);
    let fp = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
    let c = fp / n * dot(z, grad_out);
    grad_out
        .iter()
        .zip(z)
        .map(|(g, zi)| f * g + c * zi)
        .collect()
}

/// Routing weights and logits, one row per behavior position.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// `w_ij`; padded rows are zero.
    pub weights: Matrix,
    /// Logits the final weights were computed from; padded rows hold
    /// [`MASKED_LOGIT`].
    pub logits: Matrix,
}

impl CouplingMatrix {
    pub fn num_interests(&self) -> usize {
        self.weights.cols()
    }
}

/// Intermediate values of every routing iteration, kept for differentiation.
#[derive(Debug, Clone)]
struct RoutingTrace {
    /// Positions of the real behaviors in the input.
    real: Vec<usize>,
    /// `S e_i` for real behaviors.
    projected: Matrix,
    weights: Vec<Matrix>,
    candidates: Vec<Matrix>,
    capsules: Vec<Matrix>,
    detach: bool,
}

#[derive(Debug, Clone)]
pub struct RoutingOutput {
    /// Interest capsules `u_j`, shape `(K', d)`.
    pub capsules: Matrix,
    pub coupling: CouplingMatrix,
    /// The sampled logits the routing started from (real rows only).
    pub initial_logits: Matrix,
    trace: RoutingTrace,
}

impl RoutingOutput {
    pub fn num_interests(&self) -> usize {
        self.capsules.rows()
    }
}

/// Draws a `(real, interests)` matrix of `N(0, σ²)` logits, row-major.
pub fn sample_initial_logits<R: Rng + ?Sized>(
    real: usize,
    interests: usize,
    sigma: f64,
    rng: &mut R,
) -> Matrix {
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let data = (0..real * interests).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(real, interests, data)
}

/// Full routing: adaptive `K'`, Gaussian logits, `r` iterations.
pub fn b2i_routing<R: Rng + ?Sized>(
    behaviors: &BehaviorEmbeddings,
    bilinear: &Matrix,
    cfg: &RoutingConfig,
    rng: &mut R,
) -> Result<RoutingOutput> {
    let real = behaviors.real_count();
    if real == 0 {
        return Err(MindError::data("routing needs at least one unmasked behavior"));
    }
    let k = adaptive_interest_count(real, cfg.max_interests);
    let logits = sample_initial_logits(real, k, cfg.sigma, rng);
    route_with_logits(behaviors, bilinear, cfg, logits)
}

/// Routing from caller-supplied initial logits. `initial_logits` has one row
/// per real behavior, in input order, and one column per interest.
pub fn route_with_logits(
    behaviors: &BehaviorEmbeddings,
    bilinear: &Matrix,
    cfg: &RoutingConfig,
    initial_logits: Matrix,
) -> Result<RoutingOutput> {
    let d = behaviors.dim();
    if bilinear.shape() != (d, d) {
        return Err(MindError::shape(format!(
            "bilinear map is {:?}, behaviors have dim {d}",
            bilinear.shape()
        )));
    }
    if behaviors.mask.len() != behaviors.len() {
        return Err(MindError::shape("mask length differs from behavior count"));
    }
    let real: Vec<usize> = (0..behaviors.len()).filter(|&i| behaviors.mask[i]).collect();
    if real.is_empty() {
        return Err(MindError::data("routing needs at least one unmasked behavior"));
    }
    let k = initial_logits.cols();
    if initial_logits.rows() != real.len() || k == 0 {
        return Err(MindError::shape(format!(
            "initial logits {:?} for {} real behaviors",
            initial_logits.shape(),
            real.len()
        )));
    }
    if cfg.iterations == 0 {
        return Err(MindError::config("routing iterations must be at least 1"));
    }

    let mut projected = Matrix::zeros(real.len(), d);
    for (r, &i) in real.iter().enumerate() {
        projected
            .row_mut(r)
            .copy_from_slice(&bilinear.matvec(behaviors.rows.row(i)));
    }

    let mut logits = initial_logits.clone();
    let mut trace = RoutingTrace {
        real,
        projected,
        weights: Vec::with_capacity(cfg.iterations),
        candidates: Vec::with_capacity(cfg.iterations),
        capsules: Vec::with_capacity(cfg.iterations),
        detach: cfg.detach_couplings,
    };
    let mut final_logits = logits.clone();
    for _ in 0..cfg.iterations {
        let mut w = Matrix::zeros(trace.real.len(), k);
        for i in 0..trace.real.len() {
            w.row_mut(i).copy_from_slice(&softmax(logits.row(i)));
        }
        let mut z = Matrix::zeros(k, d);
        for (i, h) in trace.projected.iter_rows().enumerate() {
            for j in 0..k {
                axpy(w[(i, j)], h, z.row_mut(j));
            }
        }
        let mut u = Matrix::zeros(k, d);
        for j in 0..k {
            u.row_mut(j).copy_from_slice(&squash(z.row(j)));
        }
        final_logits.clone_from(&logits);
        for (i, h) in trace.projected.iter_rows().enumerate() {
            for j in 0..k {
                logits[(i, j)] += dot(u.row(j), h);
            }
        }
        trace.weights.push(w);
        trace.candidates.push(z);
        trace.capsules.push(u);
    }

    let n = behaviors.len();
    let mut coupling = CouplingMatrix {
        weights: Matrix::zeros(n, k),
        logits: Matrix::from_vec(n, k, vec![MASKED_LOGIT; n * k]),
    };
    let last_w = trace.weights.last().expect("at least one iteration");
    for (r, &i) in trace.real.iter().enumerate() {
        coupling.weights.row_mut(i).copy_from_slice(last_w.row(r));
        coupling.logits.row_mut(i).copy_from_slice(final_logits.row(r));
    }
    Ok(RoutingOutput {
        capsules: trace.capsules.last().expect("at least one iteration").clone(),
        coupling,
        initial_logits,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingGradients {
    /// Gradient on every behavior row; padded rows are zero.
    pub behaviors: Matrix,
    pub bilinear: Matrix,
}

/// Reverse-mode gradients of a recorded routing pass, back through all
/// unrolled iterations. The sampled initial logits are constants.
pub fn routing_gradients(
    forward: &RoutingOutput,
    behaviors: &BehaviorEmbeddings,
    bilinear: &Matrix,
    upstream: &Matrix,
) -> Result<RoutingGradients> {
    let tr = &forward.trace;
    let d = behaviors.dim();
    let k = forward.capsules.rows();
    if upstream.shape() != forward.capsules.shape() {
        return Err(MindError::shape(format!(
            "upstream gradient {:?} does not match capsules {:?}",
            upstream.shape(),
            forward.capsules.shape()
        )));
    }
    let real_now: Vec<usize> = (0..behaviors.len()).filter(|&i| behaviors.mask[i]).collect();
    if real_now != tr.real || bilinear.shape() != (d, d) || tr.projected.cols() != d {
        return Err(MindError::shape("behaviors or bilinear map differ from the recorded forward pass"));
    }

    let m = tr.real.len();
    let iters = tr.capsules.len();
    let mut grad_h = Matrix::zeros(m, d);
    // gradient w.r.t. the logits entering the iteration after the current one
    let mut grad_b = Matrix::zeros(m, k);
    for t in (0..iters).rev() {
        let u = &tr.capsules[t];
        let z = &tr.candidates[t];
        let w = &tr.weights[t];
        let mut grad_u = if t + 1 == iters {
            upstream.clone()
        } else {
            Matrix::zeros(k, d)
        };
        if !tr.detach {
            for (i, h) in tr.projected.iter_rows().enumerate() {
                for j in 0..k {
                    let g = grad_b[(i, j)];
                    if g != 0.0 {
                        axpy(g, h, grad_u.row_mut(j));
                        axpy(g, u.row(j), grad_h.row_mut(i));
                    }
                }
            }
        }
        let mut grad_z = Matrix::zeros(k, d);
        for j in 0..k {
            grad_z
                .row_mut(j)
                .copy_from_slice(&squash_backward(z.row(j), grad_u.row(j)));
        }
        for i in 0..m {
            for j in 0..k {
                axpy(w[(i, j)], grad_z.row(j), grad_h.row_mut(i));
            }
        }
        if !tr.detach {
            for (i, h) in tr.projected.iter_rows().enumerate() {
                let gw: Vec<f64> = (0..k).map(|j| dot(grad_z.row(j), h)).collect();
                let mean: f64 = (0..k).map(|j| w[(i, j)] * gw[j]).sum();
                for j in 0..k {
                    grad_b[(i, j)] += w[(i, j)] * (gw[j] - mean);
                }
            }
        }
    }

    let mut grads = RoutingGradients {
        behaviors: Matrix::zeros(behaviors.len(), d),
        bilinear: Matrix::zeros(d, d),
    };
    for (r, &i) in tr.real.iter().enumerate() {
        let gh = grad_h.row(r);
        let e = behaviors.rows.row(i);
        grads.bilinear.add_outer(1.0, gh, e);
        grads
            .behaviors
            .row_mut(i)
            .copy_from_slice(&bilinear.matvec_t(gh));
    }
    Ok(grads)
}
