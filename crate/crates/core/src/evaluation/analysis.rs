//! Per-user diagnostics: behavior-to-interest couplings and how tightly each
//! interest's candidates cluster around it.

use std::fmt::Write;

use crate::data::{ItemCatalog, TrainingInstance};
use crate::error::{MindError, Result};
use crate::linalg::Matrix;
use crate::model::{serve_forward, serve_user, ModelConfig, ModelParams};
use crate::retrieval::{exact_topn, ItemIndex};

pub const COUPLING_FORMAT: &str = "# mind-coupling v1";
pub const SIMILARITY_FORMAT: &str = "# mind-similarity v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub item: String,
    /// Category or other label; `-` when unknown.
    pub label: String,
    /// One weight per interest, summing to 1.
    pub weights: Vec<f64>,
}

/// Coupling coefficients of one user's real behaviors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    pub interests: usize,
    pub rows: Vec<CouplingRow>,
}

impl CouplingTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{COUPLING_FORMAT}\n");
        let heads: Vec<String> = (0..self.interests).map(|k| format!("interest_{k}")).collect();
        let _ = writeln!(out, "item\tlabel\t{}", heads.join("\t"));
        for row in &self.rows {
            let w: Vec<String> = row.weights.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}\t{}\t{}", row.item, row.label, w.join("\t"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(COUPLING_FORMAT) {
            return Err(MindError::format("missing coupling table header"));
        }
        let mut lines = lines.skip_while(|l| l.starts_with('#'));
        let head = lines.next().ok_or_else(|| MindError::format("missing column header"))?;
        let interests = head
            .split('\t')
            .count()
            .checked_sub(2)
            .filter(|&k| k > 0)
            .ok_or_else(|| MindError::format("coupling table has no interest columns"))?;
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != interests + 2 {
                return Err(MindError::format(format!("bad coupling row: {line}")));
            }
            let weights = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| MindError::format(format!("{f}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(CouplingRow {
                item: fields[0].to_string(),
                label: fields[1].to_string(),
                weights,
            });
        }
        Ok(Self { interests, rows })
    }

    /// Interest with the largest weight per row, ties to the lowest.
    pub fn argmax_interests(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| crate::linalg::argmax(&r.weights))
            .collect()
    }
}

/// The serving-time couplings for `inst`. `describe` maps an item index to
/// its id and label.
pub fn coupling_report(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    inst: &TrainingInstance,
    serve_seed: u64,
    describe: impl Fn(usize) -> (String, String),
) -> Result<CouplingTable> {
    let fwd = serve_forward(params, cfg, catalog, &inst.behaviors, &inst.profile, serve_seed)?;
    let weights = &fwd.routing.coupling.weights;
    let mut rows = Vec::new();
    for (pos, &item) in inst.behaviors.iter().enumerate() {
        if item == 0 {
            continue;
        }
        let w = weights.row(pos);
        let total: f64 = w.iter().sum();
        let (id, label) = describe(item);
        rows.push(CouplingRow {
            item: id,
            label: if label.is_empty() { "-".into() } else { label },
            weights: w.iter().map(|x| x / total).collect(),
        });
    }
    Ok(CouplingTable {
        interests: weights.cols(),
        rows,
    })
}

/// Bucket centres of the similarity histogram.
pub const BUCKETS: [f64; 3] = [0.0, 0.5, 1.0];

/// Min-max normalises `values` and counts them per nearest half step. If all
/// values are equal they land in the 1.0 bucket.
pub fn bucket_similarities(values: &[f64]) -> [usize; 3] {
    let mut counts = [0; 3];
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &v in values {
        let slot = if hi > lo { ((v - lo) / (hi - lo) * 2.0).round() as usize } else { 2 };
        counts[slot.min(2)] += 1;
    }
    counts
}

/// Histogram of candidate similarities per interest.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    /// `counts[k][b]` for interest `k` and bucket `BUCKETS[b]`.
    pub counts: Vec<[usize; 3]>,
}

impl SimilarityTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{SIMILARITY_FORMAT}\ninterest\tbucket\tcount\n");
        for (k, row) in self.counts.iter().enumerate() {
            for (b, c) in BUCKETS.iter().zip(row) {
                let _ = writeln!(out, "{k}\t{b:.1}\t{c}");
            }
        }
        out
    }
}

/// For each interest of `inst`, retrieves its `candidates` best items by that
/// interest alone and buckets their normalised similarities.
pub fn similarity_distribution(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    index: &ItemIndex,
    inst: &TrainingInstance,
    candidates: usize,
    serve_seed: u64,
) -> Result<SimilarityTable> {
    let interests = serve_user(params, cfg, catalog, &inst.behaviors, &inst.profile, serve_seed)?;
    let counts = interests
        .iter_rows()
        .map(|v| {
            let single = Matrix::from_rows(&[v.to_vec()]);
            let found = exact_topn(&single, index, candidates)?;
            let scores: Vec<f64> = found.hits.iter().map(|h| h.score).collect();
            Ok(bucket_similarities(&scores))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityTable { counts })
}
