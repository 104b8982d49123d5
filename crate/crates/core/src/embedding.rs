//! Embedding tables and the pooling rules for items, profiles and behaviors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ItemCatalog;
use crate::error::{MindError, Result};
use crate::linalg::{axpy, Matrix};

/// `(vocab_size, dim)` table whose row 0 is the all-zero padding row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    weights: Matrix,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(vocab_size, dim),
        }
    }

    /// Uniform in `[-1/√dim, 1/√dim]`, padding row left at zero.
    pub fn uniform<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut t = Self::zeros(vocab_size, dim);
        for v in t.weights.as_mut_slice().iter_mut().skip(dim) {
            *v = rng.random_range(-scale..=scale);
        }
        t
    }

    pub fn from_matrix(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 {
            return Err(MindError::shape("embedding table needs a padding row"));
        }
        if weights.row(0).iter().any(|&v| v != 0.0) {
            return Err(MindError::shape("embedding padding row must be zero"));
        }
        Ok(Self { weights })
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn row(&self, index: usize) -> Result<&[f64]> {
        self.check(index)?;
        Ok(self.weights.row(index))
    }

    pub fn check(&self, index: usize) -> Result<()> {
        if index >= self.vocab_size() {
            return Err(MindError::IndexOutOfRange {
                what: "embedding table",
                index,
                size: self.vocab_size(),
            });
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    /// Adds `alpha · grad` into row `index`; padding is ignored.
    pub(crate) fn accumulate(&mut self, index: usize, alpha: f64, grad: &[f64]) {
        if index != 0 {
            axpy(alpha, grad, self.weights.row_mut(index));
        }
    }
}

/// Dimensions of the item-side tables: one item table plus one table per
/// positional side feature, all of width `dim` so they can be averaged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFeatureSpec {
    pub dim: usize,
    pub item_vocab: usize,
    pub side_vocabs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTables {
    pub items: EmbeddingTable,
    pub sides: Vec<EmbeddingTable>,
}

impl ItemTables {
    pub fn new<R: Rng + ?Sized>(spec: &ItemFeatureSpec, rng: &mut R) -> Self {
        Self {
            items: EmbeddingTable::uniform(spec.item_vocab, spec.dim, rng),
            sides: spec
                .side_vocabs
                .iter()
                .map(|&v| EmbeddingTable::uniform(v, spec.dim, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            items: EmbeddingTable::zeros(self.items.vocab_size(), self.items.dim()),
            sides: self
                .sides
                .iter()
                .map(|t| EmbeddingTable::zeros(t.vocab_size(), t.dim()))
                .collect(),
        }
    }

    pub fn spec(&self) -> ItemFeatureSpec {
        ItemFeatureSpec {
            dim: self.dim(),
            item_vocab: self.items.vocab_size(),
            side_vocabs: self.sides.iter().map(EmbeddingTable::vocab_size).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.items.dim()
    }

    fn check_item(&self, item: usize, sides: &[usize]) -> Result<()> {
        if item == 0 {
            return Err(MindError::data("item index 0 is the padding slot"));
        }
        self.items.check(item)?;
        if sides.len() > self.sides.len() {
            return Err(MindError::shape(format!(
                "{} side indices for {} side tables",
                sides.len(),
                self.sides.len()
            )));
        }
        for (t, &s) in self.sides.iter().zip(sides) {
            t.check(s)?;
        }
        Ok(())
    }

    /// Number of pooled rows: the item itself plus every present side id.
    fn pooled_count(sides: &[usize]) -> usize {
        1 + sides.iter().filter(|&&s| s != 0).count()
    }

    /// Scatters the gradient of an `embed_item` output into this table set.
    pub(crate) fn accumulate_item(&mut self, item: usize, sides: &[usize], grad: &[f64]) {
        let w = 1.0 / Self::pooled_count(sides) as f64;
        self.items.accumulate(item, w, grad);
        for (t, &s) in self.sides.iter_mut().zip(sides) {
            t.accumulate(s, w, grad);
        }
    }
}

/// Mean of the item-id row and each present side-feature row.
pub fn embed_item(item: usize, sides: &[usize], tables: &ItemTables) -> Result<Vec<f64>> {
    tables.check_item(item, sides)?;
    let mut out = tables.items.matrix().row(item).to_vec();
    for (t, &s) in tables.sides.iter().zip(sides) {
        if s != 0 {
            axpy(1.0, t.matrix().row(s), &mut out);
        }
    }
    let inv = 1.0 / ItemTables::pooled_count(sides) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Looks the item's side ids up in `catalog` and pools.
pub fn embed_catalog_item(item: usize, catalog: &ItemCatalog, tables: &ItemTables) -> Result<Vec<f64>> {
    if item >= catalog.num_items() {
        return Err(MindError::IndexOutOfRange {
            what: "item catalog",
            index: item,
            size: catalog.num_items(),
        });
    }
    embed_item(item, catalog.sides(item), tables)
}

/// Concatenation of one row per profile feature, in declared order.
pub fn embed_profile(profile: &[usize], tables: &[EmbeddingTable]) -> Result<Vec<f64>> {
    if profile.len() != tables.len() {
        return Err(MindError::shape(format!(
            "profile has {} features, model expects {}",
            profile.len(),
            tables.len()
        )));
    }
    let mut out = Vec::with_capacity(tables.iter().map(EmbeddingTable::dim).sum());
    for (t, &idx) in tables.iter().zip(profile) {
        out.extend_from_slice(t.row(idx)?);
    }
    Ok(out)
}

/// Behavior embedding matrix `E_u` with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEmbeddings {
    pub rows: Matrix,
    /// `true` for real behaviors, `false` for padding.
    pub mask: Vec<bool>,
}

impl BehaviorEmbeddings {
    /// Wraps raw rows with every position real.
    pub fn unmasked(rows: Matrix) -> Self {
        let mask = vec![true; rows.rows()];
        Self { rows, mask }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }
}

/// Row `i` is the pooled embedding of behavior `i`; index 0 is padding and
/// yields a zero, masked row.
pub fn embed_behaviors(
    behaviors: &[usize],
    catalog: &ItemCatalog,
    tables: &ItemTables,
) -> Result<BehaviorEmbeddings> {
    let d = tables.dim();
    let mut rows = Matrix::zeros(behaviors.len(), d);
    let mut mask = vec![false; behaviors.len()];
    for (i, &b) in behaviors.iter().enumerate() {
        if b == 0 {
            continue;
        }
        rows.row_mut(i)
            .copy_from_slice(&embed_catalog_item(b, catalog, tables)?);
        mask[i] = true;
    }
    if !mask.iter().any(|&m| m) {
        return Err(MindError::data("behavior sequence has no real items"));
    }
    Ok(BehaviorEmbeddings { rows, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tables_2d() -> ItemTables {
        let items = EmbeddingTable::from_matrix(Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 4.0],
        ]))
        .unwrap();
        let cats =
            EmbeddingTable::from_matrix(Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]])).unwrap();
        ItemTables {
            items,
            sides: vec![cats],
        }
    }

    #[test]
    fn item_only_is_its_row() {
        let t = tables_2d();
        assert_eq!(embed_item(2, &[], &t).unwrap(), vec![3.0, 4.0]);
        assert_eq!(embed_item(2, &[0], &t).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn two_row_mean() {
        let t = tables_2d();
        assert_eq!(embed_item(1, &[1], &t).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn out_of_range_and_padding_rejected() {
        let t = tables_2d();
        assert!(matches!(embed_item(3, &[], &t), Err(MindError::IndexOutOfRange { .. })));
        assert!(embed_item(1, &[2], &t).is_err());
        assert!(embed_item(0, &[], &t).is_err());
    }

    #[test]
    fn three_feature_mean_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ItemFeatureSpec {
            dim: 6,
            item_vocab: 4,
            side_vocabs: vec![3, 5],
        };
        let t = ItemTables::new(&spec, &mut rng);
        let got = embed_item(3, &[2, 4], &t).unwrap();
        for k in 0..6 {
            let expect = (t.items.matrix()[(3, k)]
                + t.sides[0].matrix()[(2, k)]
                + t.sides[1].matrix()[(4, k)])
                / 3.0;
            assert!((got[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_concatenates_in_order() {
        let a = EmbeddingTable::from_matrix(Matrix::from_rows(&[vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]])).unwrap();
        let b = EmbeddingTable::from_matrix(Matrix::from_rows(&[vec![0.0; 4], vec![5.0, 6.0, 7.0, 8.0]])).unwrap();
        assert_eq!(embed_profile(&[1], std::slice::from_ref(&a)).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let both = embed_profile(&[1, 1], &[a, b]).unwrap();
        assert_eq!(both, (1..=8).map(f64::from).collect::<Vec<_>>());
        assert!(embed_profile(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn behaviors_match_per_item_and_mask_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ItemFeatureSpec {
            dim: 3,
            item_vocab: 6,
            side_vocabs: vec![3],
        };
        let t = ItemTables::new(&spec, &mut rng);
        let catalog = ItemCatalog::from_sides(vec![vec![0], vec![1], vec![2], vec![0], vec![1], vec![2]]).unwrap();
        let behaviors = [1, 2, 3, 4, 5];
        let e = embed_behaviors(&behaviors, &catalog, &t).unwrap();
        for (i, &b) in behaviors.iter().enumerate() {
            assert_eq!(e.rows.row(i), embed_item(b, catalog.sides(b), &t).unwrap().as_slice());
        }
        let padded = embed_behaviors(&[0, 2, 0], &catalog, &t).unwrap();
        assert_eq!(padded.mask, vec![false, true, false]);
        assert!(padded.rows.row(0).iter().all(|&v| v == 0.0));
        assert!(embed_behaviors(&[0, 0], &catalog, &t).is_err());
    }

    #[test]
    fn uniform_init_keeps_padding_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = EmbeddingTable::uniform(10, 4, &mut rng);
        assert!(t.row(0).unwrap().iter().all(|&v| v == 0.0));
        let bound = 0.5;
        assert!(t.matrix().as_slice().iter().all(|v| v.abs() <= bound));
    }
}
