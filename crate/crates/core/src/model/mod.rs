//! The multi-interest network: embeddings → routing → shared tower → interest
//! vectors, trained through label-aware attention and sampled softmax.

mod attention;
pub mod checkpoint;
pub mod gradcheck;
mod loss;
mod tower;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use attention::{attention_backward, label_aware_attention, score, Attention, AttentionOutput};
pub use loss::{
    draw_negatives, sampled_softmax_loss, LossConfig, NegativeSample, SamplerKind, SoftmaxLoss,
};
pub use tower::{Dense, Tower, TowerTrace};

use crate::data::{ItemCatalog, PreparedData, TrainingInstance, Vocabulary};
use crate::embedding::{
    embed_behaviors, embed_catalog_item, embed_profile, BehaviorEmbeddings, EmbeddingTable,
    ItemFeatureSpec, ItemTables,
};
use crate::error::{MindError, Result};
use crate::linalg::{axpy, Matrix};
use crate::routing::{
    adaptive_interest_count, route_with_logits, routing_gradients, sample_initial_logits,
    RoutingConfig, RoutingOutput,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding and interest vector width `d`.
    pub dim: usize,
    pub routing: RoutingConfig,
    /// Hidden widths of the interest tower; empty means `[4·dim]`.
    pub tower_hidden: Vec<usize>,
    pub attention: Attention,
    /// Treat soft attention weights as constants when differentiating.
    pub detach_attention: bool,
    pub loss: LossConfig,
    /// Width of each profile feature embedding.
    pub profile_dim: usize,
    /// Multiplier on the item and side embedding init range `±1/√d`.
    pub embedding_init_scale: f64,
    /// Multiplier on the bilinear map init range `±√(3/d)`.
    pub bilinear_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            routing: RoutingConfig::default(),
            tower_hidden: Vec::new(),
            attention: Attention::Hard,
            detach_attention: false,
            loss: LossConfig::default(),
            profile_dim: 8,
            embedding_init_scale: 1.0,
            bilinear_init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(MindError::config("dim must be at least 1"));
        }
        if !(self.embedding_init_scale > 0.0 && self.embedding_init_scale.is_finite())
            || !(self.bilinear_init_scale > 0.0 && self.bilinear_init_scale.is_finite())
        {
            return Err(MindError::config("init scales must be positive and finite"));
        }
        if self.tower_hidden.contains(&0) {
            return Err(MindError::config("tower hidden widths must be positive"));
        }
        self.routing.validate()?;
        self.attention.validate()?;
        self.loss.validate()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        if self.tower_hidden.is_empty() {
            vec![4 * self.dim]
        } else {
            self.tower_hidden.clone()
        }
    }
}

/// Vocabulary sizes (padding included) the parameters are built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub item_vocab: usize,
    pub side_vocabs: Vec<usize>,
    pub profile_vocabs: Vec<usize>,
}

impl ModelShape {
    pub fn of(data: &PreparedData) -> Self {
        Self {
            item_vocab: data.items.len(),
            side_vocabs: data.side_vocabs.iter().map(Vocabulary::len).collect(),
            profile_vocabs: data.profile_vocabs.iter().map(Vocabulary::len).collect(),
        }
    }
}

/// Every trainable parameter. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub item_tables: ItemTables,
    pub profile_tables: Vec<EmbeddingTable>,
    /// Shared bilinear routing map `S`, `(d, d)`.
    pub bilinear: Matrix,
    pub tower: Tower,
}

/// A named, flat view of one parameter tensor. The first `frozen` entries are
/// the padding row and are never updated.
pub struct ParamGroup<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub frozen: usize,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, shape: &ModelShape, rng: &mut R) -> Self {
        let d = cfg.dim;
        let item_tables = ItemTables::new(
            &ItemFeatureSpec {
                dim: d,
                item_vocab: shape.item_vocab,
                side_vocabs: shape.side_vocabs.clone(),
            },
            rng,
        );
        let profile_tables: Vec<EmbeddingTable> = shape
            .profile_vocabs
            .iter()
            .map(|&v| EmbeddingTable::uniform(v, cfg.profile_dim, rng))
            .collect();
        let bound = cfg.bilinear_init_scale * (3.0 / d as f64).sqrt();
        let mut bilinear = Matrix::zeros(d, d);
        for v in bilinear.as_mut_slice() {
            *v = rng.random_range(-bound..=bound);
        }
        let input = d + cfg.profile_dim * shape.profile_vocabs.len();
        let tower = Tower::new(input, &cfg.hidden_widths(), d, rng);
        let mut item_tables = item_tables;
        for t in std::iter::once(&mut item_tables.items).chain(&mut item_tables.sides) {
            for v in t.matrix_mut().as_mut_slice() {
                *v *= cfg.embedding_init_scale;
            }
        }
        Self {
            item_tables,
            profile_tables,
            bilinear,
            tower,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            item_tables: self.item_tables.zeros_like(),
            profile_tables: self
                .profile_tables
                .iter()
                .map(|t| EmbeddingTable::zeros(t.vocab_size(), t.dim()))
                .collect(),
            bilinear: Matrix::zeros(self.bilinear.rows(), self.bilinear.cols()),
            tower: self.tower.zeros_like(),
        }
    }

    pub fn dim(&self) -> usize {
        self.item_tables.dim()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            item_vocab: self.item_tables.items.vocab_size(),
            side_vocabs: self.item_tables.sides.iter().map(EmbeddingTable::vocab_size).collect(),
            profile_vocabs: self.profile_tables.iter().map(EmbeddingTable::vocab_size).collect(),
        }
    }

    /// Checks internal consistency after loading or hand construction.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.dim;
        let tables = std::iter::once(&self.item_tables.items).chain(&self.item_tables.sides);
        for t in tables {
            if t.dim() != d {
                return Err(MindError::shape("item-side table width differs from dim"));
            }
        }
        if self.bilinear.shape() != (d, d) {
            return Err(MindError::shape("bilinear map must be (dim, dim)"));
        }
        let profile_width: usize = self.profile_tables.iter().map(EmbeddingTable::dim).sum();
        if self.tower.input_dim() != d + profile_width || self.tower.output_dim() != d {
            return Err(MindError::shape("tower input/output widths do not match dim and profile"));
        }
        let finite = self.groups_ref().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(MindError::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Flat mutable views in a fixed order.
    pub fn groups_mut(&mut self) -> Vec<ParamGroup<'_>> {
        let d = self.item_tables.dim();
        let mut out = Vec::new();
        out.push(ParamGroup {
            name: "items".into(),
            values: self.item_tables.items.matrix_mut().as_mut_slice(),
            frozen: d,
        });
        for (k, t) in self.item_tables.sides.iter_mut().enumerate() {
            out.push(ParamGroup {
                name: format!("side_{k}"),
                values: t.matrix_mut().as_mut_slice(),
                frozen: d,
            });
        }
        for (k, t) in self.profile_tables.iter_mut().enumerate() {
            let w = t.dim();
            out.push(ParamGroup {
                name: format!("profile_{k}"),
                values: t.matrix_mut().as_mut_slice(),
                frozen: w,
            });
        }
        out.push(ParamGroup {
            name: "bilinear".into(),
            values: self.bilinear.as_mut_slice(),
            frozen: 0,
        });
        for (k, layer) in self.tower.layers.iter_mut().enumerate() {
            out.push(ParamGroup {
                name: format!("tower_{k}_weights"),
                values: layer.weights.as_mut_slice(),
                frozen: 0,
            });
            out.push(ParamGroup {
                name: format!("tower_{k}_bias"),
                values: &mut layer.bias,
                frozen: 0,
            });
        }
        out
    }

    /// Flat read-only views, same order as [`Self::groups_mut`].
    pub fn groups_ref(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("items".into(), self.item_tables.items.matrix().as_slice())];
        for (k, t) in self.item_tables.sides.iter().enumerate() {
            out.push((format!("side_{k}"), t.matrix().as_slice()));
        }
        for (k, t) in self.profile_tables.iter().enumerate() {
            out.push((format!("profile_{k}"), t.matrix().as_slice()));
        }
        out.push(("bilinear".into(), self.bilinear.as_slice()));
        for (k, layer) in self.tower.layers.iter().enumerate() {
            out.push((format!("tower_{k}_weights"), layer.weights.as_slice()));
            out.push((format!("tower_{k}_bias"), &layer.bias));
        }
        out
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.groups_mut() {
            g.values.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

/// Recorded forward pass for one user.
#[derive(Debug, Clone)]
pub struct UserForward {
    behaviors: Vec<usize>,
    embeddings: BehaviorEmbeddings,
    pub routing: RoutingOutput,
    profile: Vec<usize>,
    towers: Vec<TowerTrace>,
    /// `V_u`, one row per interest.
    pub interests: Matrix,
}

/// Number of interests the model will extract for `behaviors`.
pub fn interest_count(behaviors: &[usize], cfg: &ModelConfig) -> usize {
    let real = behaviors.iter().filter(|&&b| b != 0).count();
    adaptive_interest_count(real.max(1), cfg.routing.max_interests)
}

/// Forward pass from fixed initial routing logits.
pub fn forward_user(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    behaviors: &[usize],
    profile: &[usize],
    initial_logits: Matrix,
) -> Result<UserForward> {
    let embeddings = embed_behaviors(behaviors, catalog, &params.item_tables)?;
    let routing = route_with_logits(&embeddings, &params.bilinear, &cfg.routing, initial_logits)?;
    let profile_vec = embed_profile(profile, &params.profile_tables)?;
    let d = params.dim();
    let k = routing.num_interests();
    let mut interests = Matrix::zeros(k, d);
    let mut towers = Vec::with_capacity(k);
    let mut input = vec![0.0; d + profile_vec.len()];
    input[d..].copy_from_slice(&profile_vec);
    for j in 0..k {
        input[..d].copy_from_slice(routing.capsules.row(j));
        let (out, trace) = params.tower.forward_traced(&input);
        interests.row_mut(j).copy_from_slice(&out);
        towers.push(trace);
    }
    Ok(UserForward {
        behaviors: behaviors.to_vec(),
        embeddings,
        routing,
        profile: profile.to_vec(),
        towers,
        interests,
    })
}

/// Draws the initial routing logits for a user from `rng`.
pub fn draw_routing_logits<R: Rng + ?Sized>(behaviors: &[usize], cfg: &ModelConfig, rng: &mut R) -> Matrix {
    let real = behaviors.iter().filter(|&&b| b != 0).count();
    sample_initial_logits(real, interest_count(behaviors, cfg), cfg.routing.sigma, rng)
}

/// `V_u` for one user, with routing logits drawn from `rng`.
pub fn user_representations<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    behaviors: &[usize],
    profile: &[usize],
    rng: &mut R,
) -> Result<Matrix> {
    if !behaviors.iter().any(|&b| b != 0) {
        return Err(MindError::data("behavior sequence has no real items"));
    }
    let logits = draw_routing_logits(behaviors, cfg, rng);
    Ok(forward_user(params, cfg, catalog, behaviors, profile, logits)?.interests)
}

/// Generator for serving-time routing logits: seeded from the behavior list so
/// repeated requests for the same history agree.
pub fn serving_rng(seed: u64, behaviors: &[usize]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for &b in behaviors {
        h.update((b as u64).to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Deterministic serving-time `V_u`.
pub fn serve_user(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    behaviors: &[usize],
    profile: &[usize],
    seed: u64,
) -> Result<Matrix> {
    let mut rng = serving_rng(seed, behaviors);
    user_representations(params, cfg, catalog, behaviors, profile, &mut rng)
}

/// The full serving-time forward pass, couplings included.
pub fn serve_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    behaviors: &[usize],
    profile: &[usize],
    seed: u64,
) -> Result<UserForward> {
    let logits = draw_routing_logits(behaviors, cfg, &mut serving_rng(seed, behaviors));
    forward_user(params, cfg, catalog, behaviors, profile, logits)
}

/// Back-propagates a gradient on `V_u` into `grads`.
pub fn backward_user(
    params: &ModelParams,
    catalog: &ItemCatalog,
    fwd: &UserForward,
    grad_interests: &Matrix,
    grads: &mut ModelParams,
) -> Result<()> {
    let d = params.dim();
    let k = fwd.interests.rows();
    if grad_interests.shape() != fwd.interests.shape() {
        return Err(MindError::shape("gradient on interests has the wrong shape"));
    }
    let mut grad_caps = Matrix::zeros(k, d);
    let mut grad_profile = vec![0.0; params.tower.input_dim() - d];
    for j in 0..k {
        let gx = params
            .tower
            .backward(&fwd.towers[j], grad_interests.row(j), &mut grads.tower);
        grad_caps.row_mut(j).copy_from_slice(&gx[..d]);
        axpy(1.0, &gx[d..], &mut grad_profile);
    }
    let rg = routing_gradients(&fwd.routing, &fwd.embeddings, &params.bilinear, &grad_caps)?;
    axpy(1.0, rg.bilinear.as_slice(), grads.bilinear.as_mut_slice());
    for (i, &b) in fwd.behaviors.iter().enumerate() {
        if b != 0 {
            grads
                .item_tables
                .accumulate_item(b, catalog.sides(b), rg.behaviors.row(i));
        }
    }
    let mut offset = 0;
    for (t, (&idx, g)) in fwd.profile.iter().zip(grads.profile_tables.iter_mut()).enumerate() {
        let w = params.profile_tables[t].dim();
        g.accumulate(idx, 1.0, &grad_profile[offset..offset + w]);
        offset += w;
    }
    Ok(())
}

/// The stochastic choices made for one training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDraws {
    pub initial_logits: Matrix,
    pub negatives: Vec<NegativeSample>,
}

impl InstanceDraws {
    pub fn sample<R: Rng + ?Sized>(
        inst: &TrainingInstance,
        cfg: &ModelConfig,
        num_items: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let initial_logits = draw_routing_logits(&inst.behaviors, cfg, rng);
        let negatives = draw_negatives(inst.target, num_items, &cfg.loss, rng)?;
        Ok(Self {
            initial_logits,
            negatives,
        })
    }
}

/// Loss of one instance; when `grads` is given, adds `weight · ∇loss` to it.
pub fn instance_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    inst: &TrainingInstance,
    draws: &InstanceDraws,
    grads: Option<(&mut ModelParams, f64)>,
) -> Result<f64> {
    let fwd = forward_user(
        params,
        cfg,
        catalog,
        &inst.behaviors,
        &inst.profile,
        draws.initial_logits.clone(),
    )?;
    let target = embed_catalog_item(inst.target, catalog, &params.item_tables)?;
    let att = label_aware_attention(&fwd.interests, &target, cfg.attention);

    let mut items = Vec::with_capacity(draws.negatives.len() + 1);
    let mut corrections = Vec::with_capacity(draws.negatives.len() + 1);
    items.push(inst.target);
    corrections.push(0.0);
    let mut embeddings = vec![target.clone()];
    for n in &draws.negatives {
        items.push(n.item);
        corrections.push(n.log_expected_count);
        embeddings.push(embed_catalog_item(n.item, catalog, &params.item_tables)?);
    }
    let refs: Vec<&[f64]> = embeddings.iter().map(Vec::as_slice).collect();
    let sm = sampled_softmax_loss(&att.vector, &refs, &corrections);

    let Some((grads, weight)) = grads else {
        return Ok(sm.loss);
    };
    let d = params.dim();
    let mut grad_user = vec![0.0; d];
    for ((&item, e), &gl) in items.iter().zip(&embeddings).zip(&sm.grad_logits) {
        let g = weight * gl;
        axpy(g, e, &mut grad_user);
        let ge: Vec<f64> = att.vector.iter().map(|v| g * v).collect();
        grads
            .item_tables
            .accumulate_item(item, catalog.sides(item), &ge);
    }
    let (grad_interests, grad_target) =
        attention_backward(&fwd.interests, &target, cfg.attention, cfg.detach_attention, &att, &grad_user);
    grads
        .item_tables
        .accumulate_item(inst.target, catalog.sides(inst.target), &grad_target);
    backward_user(params, catalog, &fwd, &grad_interests, grads)?;
    Ok(sm.loss)
}
