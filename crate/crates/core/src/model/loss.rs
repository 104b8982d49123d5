//! Sampled softmax over the item vocabulary.
//!
//! Candidate logits are `vᵀe_c − log Q(c)` where `Q(c)` is the expected number
//! of times `c` appears among the candidates. The target is always present
//! once, so its correction is zero. With every non-target item drawn exactly
//! once the loss equals the full-vocabulary softmax cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MindError, Result};
use crate::linalg::{dot, log_sum_exp, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Zipfian over frequency rank; item index `r` has probability
    /// `ln((r+1)/r) / ln(n+1)`.
    LogUniform,
    /// Every non-target item once: exact softmax.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub negatives: usize,
    pub sampler: SamplerKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            negatives: 10,
            sampler: SamplerKind::LogUniform,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sampler == SamplerKind::LogUniform && self.negatives == 0 {
            return Err(MindError::config("negative sample count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub item: usize,
    pub log_expected_count: f64,
}

fn log_uniform_prob(rank: usize, n: usize) -> f64 {
    ((rank as f64 + 1.0) / rank as f64).ln() / (n as f64 + 1.0).ln()
}

/// Draws negatives for `target` from items `1..num_items` (index 0 is
/// padding). Draws equal to the target are rejected and redrawn.
pub fn draw_negatives<R: Rng + ?Sized>(
    target: usize,
    num_items: usize,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<Vec<NegativeSample>> {
    let n = num_items.saturating_sub(1);
    if target == 0 || target > n {
        return Err(MindError::IndexOutOfRange {
            what: "item vocabulary",
            index: target,
            size: num_items,
        });
    }
    match cfg.sampler {
        SamplerKind::Exhaustive => Ok((1..=n)
            .filter(|&i| i != target)
            .map(|item| NegativeSample {
                item,
                log_expected_count: 0.0,
            })
            .collect()),
        SamplerKind::LogUniform => {
            if cfg.negatives > n - 1 {
                return Err(MindError::config(format!(
                    "{} negatives requested but only {} non-target items exist",
                    cfg.negatives,
                    n - 1
                )));
            }
            let log_range = (n as f64 + 1.0).ln();
            let keep = 1.0 - log_uniform_prob(target, n);
            let mut out = Vec::with_capacity(cfg.negatives);
            while out.len() < cfg.negatives {
                let u: f64 = rng.random();
                let item = ((u * log_range).exp().floor() as usize).clamp(1, n);
                if item == target {
                    continue;
                }
                let expected = cfg.negatives as f64 * log_uniform_prob(item, n) / keep;
                out.push(NegativeSample {
                    item,
                    log_expected_count: expected.ln(),
                });
            }
            Ok(out)
        }
    }
}

/// Loss value and gradient with respect to each candidate logit. Candidate 0
/// is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLoss {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Cross-entropy of the target against corrected candidate logits.
///
/// `candidates[0]` is the target embedding; `corrections[c]` is subtracted
/// from the raw dot product of candidate `c`.
pub fn sampled_softmax_loss(user: &[f64], candidates: &[&[f64]], corrections: &[f64]) -> SoftmaxLoss {
    debug_assert_eq!(candidates.len(), corrections.len());
    let logits: Vec<f64> = candidates
        .iter()
        .zip(corrections)
        .map(|(e, c)| dot(user, e) - c)
        .collect();
    let loss = log_sum_exp(&logits) - logits[0];
    let mut grad_logits = softmax(&logits);
    grad_logits[0] -= 1.0;
    SoftmaxLoss {
        loss,
        logits,
        grad_logits,
    }
}
