//! Synthetic multi-interest interaction logs.
//!
//! Items are split into clusters (their category). Inside a cluster the items
//! sit on a ring. Every user owns a few clusters and, in each, an anchor
//! position; each interaction picks an owned cluster uniformly and then an item
//! near that cluster's anchor, closer items being more likely. Cluster `c`
//! carries category `c mod categories` as its one side feature.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::InteractionRecord;
use crate::error::{MindError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub users: usize,
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub clusters_per_user: usize,
    /// Distinct category labels; 0 emits no side feature.
    pub categories: usize,
    pub interactions_per_user: usize,
    /// Largest ring distance from an anchor a user interacts with.
    pub spread: usize,
    /// Weight ratio between ring distances `o+1` and `o`.
    pub decay: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            clusters: 10,
            items_per_cluster: 40,
            clusters_per_user: 3,
            categories: 10,
            interactions_per_user: 30,
            spread: 3,
            decay: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.clusters == 0 || self.items_per_cluster == 0 {
            return Err(MindError::config("synthetic users, clusters and items must be positive"));
        }
        if self.clusters_per_user == 0 || self.clusters_per_user > self.clusters {
            return Err(MindError::config("clusters per user must be in 1..=clusters"));
        }
        if self.interactions_per_user < 2 {
            return Err(MindError::config("each user needs at least two interactions"));
        }
        if 2 * self.spread + 1 > self.items_per_cluster {
            return Err(MindError::config("spread window is wider than a cluster"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(MindError::config("decay must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn item_id(&self, cluster: usize, position: usize) -> String {
        format!("i{:06}", cluster * self.items_per_cluster + position)
    }

    /// Side features of an item in `cluster`.
    pub fn side_ids(&self, cluster: usize) -> Vec<String> {
        if self.categories == 0 {
            Vec::new()
        } else {
            vec![format!("c{:03}", cluster % self.categories)]
        }
    }

    pub fn user_id(user: usize) -> String {
        format!("u{user:06}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<InteractionRecord>,
    /// Owned clusters per user id, ascending.
    pub user_clusters: BTreeMap<String, Vec<usize>>,
    /// Cluster of every item id.
    pub item_cluster: BTreeMap<String, usize>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offsets: Vec<i64> = (-(cfg.spread as i64)..=cfg.spread as i64).collect();
    let weights = WeightedIndex::new(offsets.iter().map(|o| cfg.decay.powi(o.unsigned_abs() as i32)))
        .map_err(|e| MindError::config(e.to_string()))?;
    let ring = cfg.items_per_cluster as i64;

    let mut item_cluster = BTreeMap::new();
    for c in 0..cfg.clusters {
        for p in 0..cfg.items_per_cluster {
            item_cluster.insert(cfg.item_id(c, p), c);
        }
    }
    let mut records = Vec::with_capacity(cfg.users * cfg.interactions_per_user);
    let mut user_clusters = BTreeMap::new();
    for u in 0..cfg.users {
        let user = SyntheticConfig::user_id(u);
        let mut owned = sample(&mut rng, cfg.clusters, cfg.clusters_per_user).into_vec();
        owned.sort_unstable();
        let anchors: Vec<i64> = owned.iter().map(|_| rng.random_range(0..ring)).collect();
        for t in 0..cfg.interactions_per_user {
            let slot = rng.random_range(0..owned.len());
            let pos = (anchors[slot] + offsets[weights.sample(&mut rng)]).rem_euclid(ring) as usize;
            let cluster = owned[slot];
            records.push(InteractionRecord {
                user_id: user.clone(),
                item_id: cfg.item_id(cluster, pos),
                side_ids: cfg.side_ids(cluster),
                timestamp: t as i64 + 1,
            });
        }
        user_clusters.insert(user, owned);
    }
    Ok(SyntheticData {
        records,
        user_clusters,
        item_cluster,
    })
}

/// Behavior vectors drawn around `clusters` centroids spaced `separation`
/// apart, with isotropic noise of standard deviation `std`. Returns the rows
/// and their cluster labels, cluster by cluster.
pub fn clustered_behaviors<R: Rng + ?Sized>(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    std: f64,
    rng: &mut R,
) -> Result<(Matrix, Vec<usize>)> {
    if clusters > dim {
        return Err(MindError::config("need dim >= clusters for orthogonal centroids"));
    }
    // centroids on scaled axes: pairwise distance = separation
    let scale = separation / std::f64::consts::SQRT_2;
    let mut rows = Matrix::zeros(clusters * per_cluster, dim);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        for i in 0..per_cluster {
            let row = rows.row_mut(c * per_cluster + i);
            for (j, x) in row.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(rng);
                *x = std * noise + if j == c { scale } else { 0.0 };
            }
            labels.push(c);
        }
    }
    Ok((rows, labels))
}
