//! Reference implementations written directly from the definitions, sharing
//! no code with the library beyond its public data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mind_core::{InteractionRecord, ItemCatalog, ModelParams};

pub type Rows = Vec<Vec<f64>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn mat_vec(m: &Rows, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}

pub fn squash(z: &[f64]) -> Vec<f64> {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return vec![0.0; z.len()];
    }
    let len = sq.sqrt();
    z.iter().map(|v| sq / (1.0 + sq) * v / len).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `max(1, min(k, ⌊log2 m⌋))` through floating point.
pub fn adaptive_k(m: usize, k: usize) -> usize {
    let l = (m as f64).log2().floor() as usize;
    l.min(k).max(1)
}

/// Dynamic routing as a literal loop: for `iterations` rounds, softmax each
/// behavior's logits, sum the projected behaviors per interest, squash, and
/// add the agreement to the logits. Returns the capsules and the coupling
/// weights of the last round.
pub fn routing(behaviors: &Rows, s: &Rows, initial: &Rows, iterations: usize) -> (Rows, Rows) {
    let m = behaviors.len();
    let k = initial[0].len();
    let d = s.len();
    let projected: Rows = behaviors.iter().map(|e| mat_vec(s, e)).collect();
    let mut b = initial.clone();
    let mut capsules = vec![vec![0.0; d]; k];
    let mut weights = vec![vec![0.0; k]; m];
    for _ in 0..iterations {
        for i in 0..m {
            weights[i] = softmax(&b[i]);
        }
        for j in 0..k {
            let mut z = vec![0.0; d];
            for i in 0..m {
                for t in 0..d {
                    z[t] += weights[i][j] * projected[i][t];
                }
            }
            capsules[j] = squash(&z);
        }
        for i in 0..m {
            for j in 0..k {
                b[i][j] += dot(&capsules[j], &projected[i]);
            }
        }
    }
    (capsules, weights)
}

/// Every `(item, max_k ⟨v_k, e⟩)` sorted by score then id, first `n` kept.
pub fn brute_force_topn(interests: &Rows, items: &[(usize, Vec<f64>)], n: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (id, e) in items {
        let mut best = f64::NEG_INFINITY;
        for v in interests {
            let s = dot(v, e);
            if s > best {
                best = s;
            }
        }
        scored.push((*id, best));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}

/// Count, delete everything under threshold, repeat until nothing changes.
pub fn filter(records: &[InteractionRecord], min_item: usize, min_user: usize) -> Vec<InteractionRecord> {
    let mut kept = records.to_vec();
    loop {
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        let mut users: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &kept {
            *items.entry(&r.item_id).or_default() += 1;
            *users.entry(&r.user_id).or_default() += 1;
        }
        let next: Vec<InteractionRecord> = kept
            .iter()
            .filter(|r| items[r.item_id.as_str()] >= min_item && users[r.user_id.as_str()] >= min_user)
            .cloned()
            .collect();
        if next.len() == kept.len() {
            return next;
        }
        kept = next;
    }
}

/// Distinct `(user, item)` pairs in a record set.
pub fn pairs(records: &[InteractionRecord]) -> BTreeSet<(String, String)> {
    records
        .iter()
        .map(|r| (r.user_id.clone(), r.item_id.clone()))
        .collect()
}

/// `−log softmax(V e)[target]` over every item `1..`.
pub fn full_softmax_nll(user: &[f64], items: &Rows, target: usize) -> f64 {
    let logits: Vec<f64> = items.iter().map(|e| dot(user, e)).collect();
    let m = logits[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits[1..].iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Pooled item embedding: mean of the item row and its non-zero side rows.
pub fn item_vector(params: &ModelParams, catalog: &ItemCatalog, item: usize) -> Vec<f64> {
    let mut rows = vec![params.item_tables.items.matrix().row(item).to_vec()];
    for (t, &s) in params.item_tables.sides.iter().zip(catalog.sides(item)) {
        if s != 0 {
            rows.push(t.matrix().row(s).to_vec());
        }
    }
    let d = rows[0].len();
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

/// All item vectors, index 0 included as zeros.
pub fn item_vectors(params: &ModelParams, catalog: &ItemCatalog) -> Rows {
    let d = params.item_tables.items.dim();
    let mut out = vec![vec![0.0; d]];
    out.extend((1..catalog.num_items()).map(|i| item_vector(params, catalog, i)));
    out
}

/// One user vector without routing: with a single interest every coupling is
/// 1, so the capsule is `squash(S Σ e_i)`, then the tower.
pub fn single_vector(params: &ModelParams, catalog: &ItemCatalog, behaviors: &[usize], profile: &[usize]) -> Vec<f64> {
    let d = params.item_tables.items.dim();
    let mut sum = vec![0.0; d];
    for &b in behaviors.iter().filter(|&&b| b != 0) {
        let e = item_vector(params, catalog, b);
        for j in 0..d {
            sum[j] += e[j];
        }
    }
    let s: Rows = params.bilinear.iter_rows().map(<[f64]>::to_vec).collect();
    let mut x = squash(&mat_vec(&s, &sum));
    for (t, &p) in params.profile_tables.iter().zip(profile) {
        x.extend_from_slice(t.matrix().row(p));
    }
    let layers = &params.tower.layers;
    for (n, layer) in layers.iter().enumerate() {
        let w: Rows = layer.weights.iter_rows().map(<[f64]>::to_vec).collect();
        let mut y = mat_vec(&w, &x);
        for (v, b) in y.iter_mut().zip(&layer.bias) {
            *v += b;
            if n + 1 < layers.len() {
                *v = v.max(0.0);
            }
        }
        x = y;
    }
    x
}

/// Items ranked by `⟨v, e⟩`, ties by id.
pub fn single_vector_ranking(v: &[f64], items: &Rows) -> Vec<usize> {
    let rows: Vec<(usize, Vec<f64>)> = items.iter().cloned().enumerate().skip(1).collect();
    brute_force_topn(&vec![v.to_vec()], &rows, rows.len())
        .into_iter()
        .map(|(i, _)| i)
        .collect()
}
