//! Top-N retrieval under the multi-interest score `max_k <v_k, e_item>`.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ItemCatalog;
use crate::embedding::{embed_catalog_item, ItemTables};
use crate::error::{MindError, Result};
use crate::linalg::{dot, Matrix};

pub const KMEANS_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionConfig {
    pub count: usize,
    pub seed: u64,
}

/// Coarse partition of the index rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub centroids: Matrix,
    /// Row positions per partition; a disjoint cover of all rows.
    pub members: Vec<Vec<usize>>,
}

/// Item vectors with their ids. Never contains the padding item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemIndex {
    ids: Vec<usize>,
    vectors: Matrix,
    partitions: Option<Partitions>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub item: usize,
    pub score: f64,
    /// Interest row that produced the score.
    pub interest: usize,
}

/// Hits ordered by descending score, ties by ascending item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn items(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.item).collect()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.hits.iter().any(|h| h.item == item)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// `rank\titem\tscore\tinterest` lines, rank starting at 1.
    pub fn to_tsv(&self, id_of: impl Fn(usize) -> String) -> String {
        let mut out = String::from("rank\titem\tscore\tinterest\n");
        for (r, h) in self.hits.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{:.12e}\t{}\n", r + 1, id_of(h.item), h.score, h.interest));
        }
        out
    }
}

/// Builds an index over `vectors`, row `r` standing for item `ids[r]`.
pub fn build_index(vectors: Matrix, ids: Vec<usize>, partitions: Option<PartitionConfig>) -> Result<ItemIndex> {
    if vectors.rows() == 0 {
        return Err(MindError::config("cannot index an empty item set"));
    }
    if ids.len() != vectors.rows() {
        return Err(MindError::shape(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
    }
    if ids.contains(&0) {
        return Err(MindError::data("the padding item cannot be indexed"));
    }
    let partitions = match partitions {
        None => None,
        Some(p) => Some(kmeans(&vectors, p)?),
    };
    Ok(ItemIndex {
        ids,
        vectors,
        partitions,
    })
}

impl ItemIndex {
    /// Index of every catalog item's embedding.
    pub fn from_model(
        tables: &ItemTables,
        catalog: &ItemCatalog,
        partitions: Option<PartitionConfig>,
    ) -> Result<Self> {
        let n = tables.items.vocab_size() - 1;
        let d = tables.dim();
        let mut vectors = Matrix::zeros(n, d);
        for item in 1..=n {
            vectors
                .row_mut(item - 1)
                .copy_from_slice(&embed_catalog_item(item, catalog, tables)?);
        }
        build_index(vectors, (1..=n).collect(), partitions)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn partitions(&self) -> Option<&Partitions> {
        self.partitions.as_ref()
    }

    fn check_query(&self, interests: &Matrix) -> Result<()> {
        if interests.rows() == 0 {
            return Err(MindError::shape("query has no interest vectors"));
        }
        if interests.cols() != self.dim() {
            return Err(MindError::shape(format!(
                "query dim {} does not match index dim {}",
                interests.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn hit(&self, interests: &Matrix, row: usize) -> Hit {
        let v = self.vectors.row(row);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, q) in interests.iter_rows().enumerate() {
            let s = dot(q, v);
            if s > best.1 {
                best = (k, s);
            }
        }
        Hit {
            item: self.ids[row],
            // -0.0 and 0.0 must tie under total_cmp
            score: best.1 + 0.0,
            interest: best.0,
        }
    }
}

fn rank(mut hits: Vec<Hit>, n: usize) -> RetrievalResult {
    let order = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item));
    if hits.len() > n {
        hits.select_nth_unstable_by(n, order);
        hits.truncate(n);
    }
    hits.sort_by(order);
    RetrievalResult { hits }
}

/// Exact top-`n` by scanning every item.
pub fn exact_topn(interests: &Matrix, index: &ItemIndex, n: usize) -> Result<RetrievalResult> {
    index.check_query(interests)?;
    if n == 0 {
        return Err(MindError::config("top-N needs N >= 1"));
    }
    let hits = (0..index.len()).map(|r| index.hit(interests, r)).collect();
    Ok(rank(hits, n))
}

/// Approximate top-`n`: each interest probes its `probes` best partitions by
/// centroid dot product, and the union of their members is scored exactly.
pub fn ann_topn(interests: &Matrix, index: &ItemIndex, n: usize, probes: usize) -> Result<RetrievalResult> {
    index.check_query(interests)?;
    if n == 0 {
        return Err(MindError::config("top-N needs N >= 1"));
    }
    let parts = index
        .partitions
        .as_ref()
        .ok_or_else(|| MindError::config("approximate search needs a partitioned index"))?;
    let count = parts.members.len();
    if probes == 0 || probes > count {
        return Err(MindError::config(format!("probes must be in 1..={count}, got {probes}")));
    }
    let mut chosen = BTreeSet::new();
    for q in interests.iter_rows() {
        let mut order: Vec<(usize, f64)> = parts
            .centroids
            .iter_rows()
            .enumerate()
            .map(|(c, centroid)| (c, dot(q, centroid)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        chosen.extend(order[..probes].iter().map(|&(c, _)| c));
    }
    let hits = chosen
        .into_iter()
        .flat_map(|c| parts.members[c].iter().copied())
        .map(|r| index.hit(interests, r))
        .collect();
    Ok(rank(hits, n))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Matrix, v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let dist = squared_distance(centroid, v);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best.0
}

/// Seeded Lloyd iterations. A cluster that empties is restarted at a random row.
fn kmeans(vectors: &Matrix, cfg: PartitionConfig) -> Result<Partitions> {
    let (n, d) = vectors.shape();
    if cfg.count == 0 || cfg.count > n {
        return Err(MindError::config(format!(
            "cannot build {} partitions over {n} items",
            cfg.count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = Matrix::zeros(cfg.count, d);
    for (c, r) in sample(&mut rng, n, cfg.count).into_iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(vectors.row(r));
    }
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        for (r, a) in assign.iter_mut().enumerate() {
            *a = nearest(&centroids, vectors.row(r));
        }
        let mut sums = Matrix::zeros(cfg.count, d);
        let mut sizes = vec![0usize; cfg.count];
        for (r, &a) in assign.iter().enumerate() {
            sizes[a] += 1;
            for (s, x) in sums.row_mut(a).iter_mut().zip(vectors.row(r)) {
                *s += x;
            }
        }
        for c in 0..cfg.count {
            if sizes[c] == 0 {
                let r = rng.random_range(0..n);
                centroids.row_mut(c).copy_from_slice(vectors.row(r));
            } else {
                let inv = 1.0 / sizes[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let mut members = vec![Vec::new(); cfg.count];
    for r in 0..n {
        members[nearest(&centroids, vectors.row(r))].push(r);
    }
    Ok(Partitions { centroids, members })
}
