//! Offline experiments: HitRate@N, method comparisons and hyperparameter sweeps.

mod analysis;
mod report;

pub use analysis::{coupling_report, similarity_distribution, CouplingTable, SimilarityTable};
pub use report::{mean_std, EvalReport, MethodSummary, SweepReport};

use serde::{Deserialize, Serialize};

use crate::data::{ItemCatalog, PreparedData, TrainingInstance};
use crate::error::{MindError, Result};
use crate::linalg::Matrix;
use crate::model::train::{init_params, run_epoch, AdamState, TrainConfig};
use crate::model::{serve_user, Attention, ModelConfig, ModelParams, ModelShape};
use crate::retrieval::{ann_topn, exact_topn, ItemIndex, PartitionConfig, RetrievalResult};

/// How candidates are retrieved at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RetrievalMode {
    Exact,
    Approximate { partitions: usize, probes: usize },
}

impl Default for RetrievalMode {
    fn default() -> Self {
        Self::Exact
    }
}

/// Settings shared by every evaluated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Cutoffs, ascending.
    pub cutoffs: Vec<usize>,
    pub retrieval: RetrievalMode,
    /// Seed for serving-time routing logits and index partitioning.
    pub serve_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            cutoffs: vec![10, 50, 100],
            retrieval: RetrievalMode::Exact,
            serve_seed: 0,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(MindError::config("hit-rate cutoffs must be non-empty and positive"));
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MindError::config("hit-rate cutoffs must be strictly ascending"));
        }
        Ok(())
    }
}

/// The inputs every experiment cell shares.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub catalog: &'a ItemCatalog,
    pub train: &'a [TrainingInstance],
    pub test: &'a [TrainingInstance],
    pub shape: &'a ModelShape,
    pub split_digest: &'a str,
}

impl<'a> Dataset<'a> {
    pub fn new(data: &'a PreparedData, shape: &'a ModelShape) -> Self {
        Self {
            catalog: &data.catalog,
            train: &data.split.train,
            test: &data.split.test,
            shape,
            split_digest: &data.manifest.split_digest,
        }
    }
}

/// Builds the item index a retrieval mode needs.
pub fn build_item_index(params: &ModelParams, catalog: &ItemCatalog, settings: &EvalSettings) -> Result<ItemIndex> {
    let partitions = match settings.retrieval {
        RetrievalMode::Exact => None,
        RetrievalMode::Approximate { partitions, .. } => Some(PartitionConfig {
            count: partitions,
            seed: settings.serve_seed,
        }),
    };
    ItemIndex::from_model(&params.item_tables, catalog, partitions)
}

pub fn retrieve(interests: &Matrix, index: &ItemIndex, n: usize, mode: RetrievalMode) -> Result<RetrievalResult> {
    match mode {
        RetrievalMode::Exact => exact_topn(interests, index, n),
        RetrievalMode::Approximate { probes, .. } => ann_topn(interests, index, n, probes),
    }
}

/// HitRate at every cutoff in `settings`, over `instances`.
pub fn hit_rates(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    index: &ItemIndex,
    instances: &[TrainingInstance],
    settings: &EvalSettings,
) -> Result<Vec<f64>> {
    settings.validate()?;
    if instances.is_empty() {
        return Err(MindError::data("no test instances to evaluate"));
    }
    let largest = *settings.cutoffs.last().expect("validated non-empty");
    let mut hits = vec![0usize; settings.cutoffs.len()];
    for inst in instances {
        let interests = serve_user(params, cfg, catalog, &inst.behaviors, &inst.profile, settings.serve_seed)?;
        let found = retrieve(&interests, index, largest, settings.retrieval)?;
        if let Some(rank) = found.hits.iter().position(|h| h.item == inst.target) {
            for (h, &n) in hits.iter_mut().zip(&settings.cutoffs) {
                if rank < n {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / instances.len() as f64).collect())
}

/// HitRate@`n` for a trained model.
pub fn hit_rate(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    instances: &[TrainingInstance],
    n: usize,
    settings: &EvalSettings,
) -> Result<f64> {
    let settings = EvalSettings {
        cutoffs: vec![n],
        ..settings.clone()
    };
    let index = build_item_index(params, catalog, &settings)?;
    Ok(hit_rates(params, cfg, catalog, &index, instances, &settings)?[0])
}

/// Items ordered by how often they are a training target, ties by index.
pub fn popularity_ranking(train: &[TrainingInstance], num_items: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_items];
    for inst in train {
        if inst.target < num_items {
            counts[inst.target] += 1;
        }
    }
    let mut items: Vec<usize> = (1..num_items).collect();
    items.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    items
}

pub fn popularity_hit_rates(ranking: &[usize], instances: &[TrainingInstance], cutoffs: &[usize]) -> Result<Vec<f64>> {
    if instances.is_empty() {
        return Err(MindError::data("no test instances to evaluate"));
    }
    let mut rank_of = vec![usize::MAX; ranking.iter().max().map_or(0, |&m| m + 1)];
    for (r, &item) in ranking.iter().enumerate() {
        rank_of[item] = r;
    }
    Ok(cutoffs
        .iter()
        .map(|&n| {
            let hits = instances
                .iter()
                .filter(|i| rank_of.get(i.target).is_some_and(|&r| r < n))
                .count();
            hits as f64 / instances.len() as f64
        })
        .collect())
}

/// Result of training and evaluating one configuration with one seed.
#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Finished {
        /// HitRate per cutoff after the final epoch.
        hit_rates: Vec<f64>,
        /// HitRate at the first cutoff after each epoch, when tracked.
        curve: Vec<f64>,
        epoch_losses: Vec<f64>,
    },
    /// Training produced a non-finite loss.
    Diverged(String),
}

impl CellOutcome {
    pub fn hit_rates(&self) -> Option<&[f64]> {
        match self {
            Self::Finished { hit_rates, .. } => Some(hit_rates),
            Self::Diverged(_) => None,
        }
    }
}

/// Trains from a seeded initialisation and evaluates on the test split.
pub fn train_and_evaluate(
    data: &Dataset<'_>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    settings: &EvalSettings,
    track_curve: bool,
) -> Result<CellOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    settings.validate()?;
    let mut params = init_params(model_cfg, data.shape, train_cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut losses = Vec::with_capacity(train_cfg.epochs);
    let mut curve = Vec::new();
    let first = EvalSettings {
        cutoffs: vec![settings.cutoffs[0]],
        ..settings.clone()
    };
    for epoch in 0..train_cfg.epochs {
        match run_epoch(&mut params, &mut adam, data.catalog, data.train, model_cfg, train_cfg, epoch, |_| {}) {
            Ok(loss) => losses.push(loss),
            Err(MindError::Numeric(msg)) => return Ok(CellOutcome::Diverged(msg)),
            Err(e) => return Err(e),
        }
        if track_curve {
            let index = build_item_index(&params, data.catalog, &first)?;
            curve.push(hit_rates(&params, model_cfg, data.catalog, &index, data.test, &first)?[0]);
        }
    }
    let index = build_item_index(&params, data.catalog, settings)?;
    let hit_rates = hit_rates(&params, model_cfg, data.catalog, &index, data.test, settings)?;
    Ok(CellOutcome::Finished {
        hit_rates,
        curve,
        epoch_losses: losses,
    })
}

/// A method in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// MIND with at most this many interests.
    Mind(usize),
    Popularity,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Self::Mind(k) => format!("MIND-{k}"),
            Self::Popularity => "popularity".to_string(),
        }
    }
}

/// Trains and evaluates every method once per seed on one shared split.
/// Relative improvements are reported against MIND-1 when it is present.
pub fn run_comparison(
    data: &Dataset<'_>,
    methods: &[Method],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    settings: &EvalSettings,
    config_digest: &str,
) -> Result<EvalReport> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(MindError::config("comparison needs at least one method and one seed"));
    }
    let ranking = popularity_ranking(data.train, data.shape.item_vocab);
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let cells = seeds
            .iter()
            .map(|&seed| match method {
                Method::Popularity => Ok(CellOutcome::Finished {
                    hit_rates: popularity_hit_rates(&ranking, data.test, &settings.cutoffs)?,
                    curve: Vec::new(),
                    epoch_losses: Vec::new(),
                }),
                Method::Mind(k) => {
                    let mut cfg = model_cfg.clone();
                    cfg.routing.max_interests = *k;
                    let tc = TrainConfig { seed, ..*train_cfg };
                    train_and_evaluate(data, &cfg, &tc, settings, false)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((method.label(), cells));
    }
    Ok(EvalReport::new(
        rows,
        seeds.to_vec(),
        settings.cutoffs.clone(),
        data.test.len(),
        config_digest.to_string(),
        data.split_digest.to_string(),
        Method::Mind(1).label(),
    ))
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Sigma,
    Power,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sigma => "sigma",
            Self::Power => "p",
        }
    }
}

fn sweep(
    data: &Dataset<'_>,
    axis: SweepAxis,
    values: Vec<(String, ModelConfig)>,
    seeds: &[u64],
    train_cfg: &TrainConfig,
    settings: &EvalSettings,
    config_digest: &str,
) -> Result<SweepReport> {
    if values.is_empty() || seeds.is_empty() {
        return Err(MindError::config("sweep needs at least one value and one seed"));
    }
    let mut cells = Vec::with_capacity(values.len());
    for (label, cfg) in values {
        let row = seeds
            .iter()
            .map(|&seed| {
                let tc = TrainConfig { seed, ..*train_cfg };
                train_and_evaluate(data, &cfg, &tc, settings, true)
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push((label, row));
    }
    Ok(SweepReport::new(
        axis.name().to_string(),
        cells,
        seeds.to_vec(),
        settings.cutoffs.clone(),
        config_digest.to_string(),
        data.split_digest.to_string(),
    ))
}

/// Varies the initial routing logit scale, everything else fixed.
pub fn sweep_sigma(
    data: &Dataset<'_>,
    grid: &[f64],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    settings: &EvalSettings,
    config_digest: &str,
) -> Result<SweepReport> {
    let values = grid
        .iter()
        .map(|&sigma| {
            let mut cfg = model_cfg.clone();
            cfg.routing.sigma = sigma;
            (format!("{sigma}"), cfg)
        })
        .collect();
    sweep(data, SweepAxis::Sigma, values, seeds, train_cfg, settings, config_digest)
}

/// Varies the attention sharpness, everything else fixed.
pub fn sweep_p(
    data: &Dataset<'_>,
    grid: &[Attention],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    settings: &EvalSettings,
    config_digest: &str,
) -> Result<SweepReport> {
    let values = grid
        .iter()
        .map(|&attention| {
            let cfg = ModelConfig {
                attention,
                ..model_cfg.clone()
            };
            (attention.to_string(), cfg)
        })
        .collect();
    sweep(data, SweepAxis::Power, values, seeds, train_cfg, settings, config_digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::retrieval::build_index;

    fn inst(target: usize) -> TrainingInstance {
        TrainingInstance {
            user_id: "u".into(),
            behaviors: vec![1],
            profile: vec![],
            target,
            target_timestamp: 1,
        }
    }

    #[test]
    fn popularity_orders_by_count_then_index() {
        let train: Vec<_> = [3, 3, 2, 4, 4, 1].into_iter().map(inst).collect();
        assert_eq!(popularity_ranking(&train, 6), vec![3, 4, 1, 2, 5]);
        let test: Vec<_> = [3, 4, 5, 1].into_iter().map(inst).collect();
        let ranking = popularity_ranking(&train, 6);
        assert_eq!(popularity_hit_rates(&ranking, &test, &[1, 2, 5]).unwrap(), vec![0.25, 0.5, 1.0]);
        assert!(popularity_hit_rates(&ranking, &[], &[1]).is_err());
    }

    #[test]
    fn cutoff_rules() {
        let bad = EvalSettings {
            cutoffs: vec![50, 10],
            ..EvalSettings::default()
        };
        assert!(bad.validate().is_err());
        assert!(EvalSettings::default().validate().is_ok());
    }

    #[test]
    fn whole_catalog_is_always_a_hit() {
        let cfg = ModelConfig {
            dim: 4,
            profile_dim: 2,
            ..ModelConfig::default()
        };
        let shape = ModelShape {
            item_vocab: 8,
            side_vocabs: vec![],
            profile_vocabs: vec![],
        };
        let params = init_params(&cfg, &shape, 1);
        let catalog = ItemCatalog::items_only(8);
        let test: Vec<_> = (1..8).map(inst).collect();
        let hr = hit_rate(&params, &cfg, &catalog, &test, 7, &EvalSettings::default()).unwrap();
        assert_eq!(hr, 1.0);
        let small = hit_rate(&params, &cfg, &catalog, &test, 1, &EvalSettings::default()).unwrap();
        assert!((small - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn retrieve_dispatches_on_mode() {
        let index = build_index(Matrix::identity(3), vec![1, 2, 3], Some(PartitionConfig { count: 3, seed: 0 })).unwrap();
        let q = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]);
        let exact = retrieve(&q, &index, 1, RetrievalMode::Exact).unwrap();
        let ann = retrieve(&q, &index, 1, RetrievalMode::Approximate { partitions: 3, probes: 3 }).unwrap();
        assert_eq!(exact, ann);
        assert_eq!(exact.items(), vec![2]);
    }
}
