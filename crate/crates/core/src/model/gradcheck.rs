//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{instance_loss, InstanceDraws, ModelConfig, ModelParams};
use crate::data::{ItemCatalog, TrainingInstance};
use crate::error::Result;

/// Denominator floor for relative error, so coordinates whose true gradient is
/// ~0 are judged by absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_relative_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient of one instance's loss against central
/// differences with step `step`. Up to `per_group` coordinates are checked in
/// each parameter group (all of them when the group is smaller). The draws
/// are frozen, so the loss is a deterministic function of the parameters.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    catalog: &ItemCatalog,
    inst: &TrainingInstance,
    draws: &InstanceDraws,
    step: f64,
    per_group: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut analytic = params.zeros_like();
    instance_loss(params, cfg, catalog, inst, draws, Some((&mut analytic, 1.0)))?;
    let analytic_groups: Vec<Vec<f64>> = analytic
        .groups_ref()
        .into_iter()
        .map(|(_, v)| v.to_vec())
        .collect();

    let mut probe = params.clone();
    let layout: Vec<(String, usize, usize)> = probe
        .groups_mut()
        .into_iter()
        .map(|g| (g.name, g.frozen, g.values.len()))
        .collect();

    let mut report = GradCheckReport { groups: Vec::new() };
    for (k, (name, frozen, len)) in layout.into_iter().enumerate() {
        let free = len - frozen;
        let coords: Vec<usize> = if free <= per_group {
            (frozen..len).collect()
        } else {
            sample(rng, free, per_group).into_iter().map(|i| i + frozen).collect()
        };
        let mut check = GroupCheck {
            name,
            checked: coords.len(),
            max_relative_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in coords {
            let original = probe.groups_mut()[k].values[i];
            probe.groups_mut()[k].values[i] = original + step;
            let up = instance_loss(&probe, cfg, catalog, inst, draws, None)?;
            probe.groups_mut()[k].values[i] = original - step;
            let down = instance_loss(&probe, cfg, catalog, inst, draws, None)?;
            probe.groups_mut()[k].values[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic_groups[k][i];
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.max_relative_error = check.max_relative_error.max(relative_error(a, numeric));
        }
        report.groups.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Attention, LossConfig, ModelShape, SamplerKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_has_zero_error() {
        // one real item and exhaustive negatives: the softmax has a single
        // candidate, so the loss is identically zero
        let cfg = ModelConfig {
            dim: 3,
            loss: LossConfig {
                negatives: 0,
                sampler: SamplerKind::Exhaustive,
            },
            ..ModelConfig::default()
        };
        let shape = ModelShape {
            item_vocab: 2,
            side_vocabs: vec![],
            profile_vocabs: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(&cfg, &shape, &mut rng);
        let catalog = ItemCatalog::items_only(2);
        let inst = TrainingInstance {
            user_id: "u".into(),
            behaviors: vec![1, 1],
            profile: vec![],
            target: 1,
            target_timestamp: 0,
        };
        let draws = InstanceDraws::sample(&inst, &cfg, 2, &mut rng).unwrap();
        let rep = gradient_check(&params, &cfg, &catalog, &inst, &draws, 1e-5, 200, &mut rng).unwrap();
        assert_eq!(rep.max_relative_error(), 0.0);
    }

    #[test]
    fn small_model_passes() {
        let cfg = ModelConfig {
            dim: 5,
            profile_dim: 2,
            attention: Attention::Power(2.0),
            loss: LossConfig {
                negatives: 4,
                sampler: SamplerKind::LogUniform,
            },
            ..ModelConfig::default()
        };
        let shape = ModelShape {
            item_vocab: 10,
            side_vocabs: vec![3],
            profile_vocabs: vec![3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = ModelParams::init(&cfg, &shape, &mut rng);
        let sides = (0..10).map(|i| vec![i % 3]).collect();
        let catalog = ItemCatalog::from_sides(sides).unwrap();
        let inst = TrainingInstance {
            user_id: "u".into(),
            behaviors: vec![1, 2, 3, 4, 5, 6, 7, 8],
            profile: vec![2],
            target: 9,
            target_timestamp: 0,
        };
        let draws = InstanceDraws::sample(&inst, &cfg, 10, &mut rng).unwrap();
        let rep = gradient_check(&params, &cfg, &catalog, &inst, &draws, 1e-5, 50, &mut rng).unwrap();
        assert!(rep.max_relative_error() < 1e-4, "{rep:?}");
    }
}
