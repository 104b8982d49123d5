use serde::{Deserialize, Serialize};

use crate::error::{MindError, Result};
use crate::linalg::{argmax, axpy, dot, softmax, Matrix};

/// How the target item weighs the interest vectors during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttentionRepr", into = "String")]
pub enum Attention {
    /// `softmax(pow(max(s, 0), p))` over scores `s`.
    Power(f64),
    /// Select the highest-scoring interest.
    Hard,
}

impl Attention {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Attention::Power(p) if !(p.is_finite() && p >= 0.0) => Err(MindError::config(format!(
                "attention power must be finite and non-negative, got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Attention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Attention::Power(p) => write!(f, "{p}"),
            Attention::Hard => f.write_str("hard"),
        }
    }
}

impl std::str::FromStr for Attention {
    type Err = MindError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s, "hard" | "inf" | "infinity") {
            return Ok(Attention::Hard);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| MindError::config(format!("attention must be a number or \"hard\", got {s:?}")))?;
        let a = Attention::Power(p);
        a.validate()?;
        Ok(a)
    }
}

/// Accepts `2`, `"2"` or `"hard"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum AttentionRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<AttentionRepr> for Attention {
    type Error = MindError;

    fn try_from(r: AttentionRepr) -> Result<Self> {
        match r {
            AttentionRepr::Number(p) => {
                let a = Attention::Power(p);
                a.validate()?;
                Ok(a)
            }
            AttentionRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Attention> for String {
    fn from(a: Attention) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Label-aware user vector.
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
}

fn powered(s: f64, p: f64) -> f64 {
    s.max(0.0).powf(p)
}

/// Attention with the label item as query and the interest vectors as both
/// keys and values. Negative scores are clamped to zero before the power.
pub fn label_aware_attention(interests: &Matrix, item: &[f64], mode: Attention) -> AttentionOutput {
    let scores: Vec<f64> = interests.iter_rows().map(|r| dot(r, item)).collect();
    let weights = match mode {
        Attention::Hard => {
            let mut w = vec![0.0; scores.len()];
            w[argmax(&scores)] = 1.0;
            w
        }
        Attention::Power(p) => softmax(&scores.iter().map(|&s| powered(s, p)).collect::<Vec<_>>()),
    };
    let mut vector = vec![0.0; interests.cols()];
    for (r, &w) in interests.iter_rows().zip(&weights) {
        if w != 0.0 {
            axpy(w, r, &mut vector);
        }
    }
    AttentionOutput {
        vector,
        weights,
        scores,
    }
}

/// Gradients of the attention output with respect to the interest matrix and
/// the item embedding. Hard mode routes the gradient to the selected row only;
/// `detach_weights` treats soft weights the same way, as constants.
pub fn attention_backward(
    interests: &Matrix,
    item: &[f64],
    mode: Attention,
    detach_weights: bool,
    out: &AttentionOutput,
    grad_vector: &[f64],
) -> (Matrix, Vec<f64>) {
    let mut g_interests = Matrix::zeros(interests.rows(), interests.cols());
    let mut g_item = vec![0.0; item.len()];
    for (k, &w) in out.weights.iter().enumerate() {
        if w != 0.0 {
            axpy(w, grad_vector, g_interests.row_mut(k));
        }
    }
    if let (Attention::Power(p), false) = (mode, detach_weights) {
        let gw: Vec<f64> = interests.iter_rows().map(|r| dot(r, grad_vector)).collect();
        let mean: f64 = out.weights.iter().zip(&gw).map(|(w, g)| w * g).sum();
        for (k, &s) in out.scores.iter().enumerate() {
            if s <= 0.0 || p == 0.0 {
                continue;
            }
            let ga = out.weights[k] * (gw[k] - mean);
            let gs = ga * p * s.powf(p - 1.0);
            axpy(gs, item, g_interests.row_mut(k));
            axpy(gs, interests.row(k), &mut g_item);
        }
    }
    (g_interests, g_item)
}

/// `max_k ⟨e, v_k⟩`, the retrieval score of an item for a user.
pub fn score(interests: &Matrix, item: &[f64]) -> f64 {
    interests
        .iter_rows()
        .map(|r| dot(r, item))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_power_is_uniform_mean() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0], vec![-2.0, 1.0]]);
        let out = label_aware_attention(&v, &[0.5, 0.2], Attention::Power(0.0));
        for w in &out.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((out.vector[0] - (-1.0 / 3.0)).abs() < 1e-15);
        assert!((out.vector[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hard_mode_returns_argmax_row() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        let out = label_aware_attention(&v, &[0.0, 1.0], Attention::Hard);
        assert_eq!(out.vector, vec![0.0, 3.0]);
        // tie resolves to the first row
        let tie = label_aware_attention(&v, &[0.0, 0.0], Attention::Hard);
        assert_eq!(tie.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn two_scores_power_one() {
        let v = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]);
        let out = label_aware_attention(&v, &[1.0, 1.0], Attention::Power(1.0));
        assert!((out.weights[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((out.weights[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((out.vector[0] - 2.0 * out.weights[0]).abs() < 1e-15);
    }

    #[test]
    fn detached_weights_pass_gradient_by_weight_only() {
        let v = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.3, 1.0]]);
        let item = [1.0, 0.7];
        let mode = Attention::Power(2.0);
        let out = label_aware_attention(&v, &item, mode);
        let g = [0.4, -1.2];
        let (gv, gi) = attention_backward(&v, &item, mode, true, &out, &g);
        assert!(gi.iter().all(|&x| x == 0.0));
        for k in 0..2 {
            for j in 0..2 {
                assert_eq!(gv[(k, j)], out.weights[k] * g[j]);
            }
        }
        let (full, gi_full) = attention_backward(&v, &item, mode, false, &out, &g);
        assert_ne!(full, gv);
        assert!(gi_full.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("hard".parse::<Attention>().unwrap(), Attention::Hard);
        assert_eq!("2".parse::<Attention>().unwrap(), Attention::Power(2.0));
        assert!("-1".parse::<Attention>().is_err());
        assert_eq!(Attention::Power(0.5).to_string(), "0.5");
        let from_json = |t: &str| serde_json::from_str::<Attention>(t);
        assert_eq!(from_json("4").unwrap(), Attention::Power(4.0));
        assert_eq!(from_json("\"hard\"").unwrap(), Attention::Hard);
        assert!(from_json("-2").is_err());
        assert_eq!(serde_json::to_string(&Attention::Power(2.0)).unwrap(), "\"2\"");
    }

    #[test]
    fn score_selects_best_row() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(score(&v, &[0.0, 1.0]), 1.0);
        let single = Matrix::from_rows(&[vec![2.0, -1.0]]);
        assert_eq!(score(&single, &[3.0, 4.0]), 2.0);
    }
}
