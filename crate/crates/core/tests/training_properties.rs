mod oracle;

use mind_core::model::train::{init_params, run_epoch};
use mind_core::model::{instance_loss, InstanceDraws, LossConfig, SamplerKind};
use mind_core::{AdamState, Checkpoint, ItemCatalog, ModelConfig, ModelShape, TrainConfig, TrainingInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exhaustive(dim: usize, k: usize) -> ModelConfig {
    let mut cfg = ModelConfig {
        dim,
        profile_dim: 2,
        loss: LossConfig {
            negatives: 0,
            sampler: SamplerKind::Exhaustive,
        },
        ..ModelConfig::default()
    };
    cfg.routing.max_interests = k;
    cfg
}

fn instances(items: usize, count: usize, seed: u64) -> Vec<TrainingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|u| {
            let len = rng.random_range(1..8);
            TrainingInstance {
                user_id: format!("u{u}"),
                behaviors: (0..len).map(|_| rng.random_range(1..items)).collect(),
                profile: vec![rng.random_range(1..3)],
                target: rng.random_range(1..items),
                target_timestamp: 0,
            }
        })
        .collect()
}

#[test]
fn exhaustive_loss_is_the_full_softmax() {
    let mut gen = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50u64 {
        let items = gen.random_range(3..12);
        let cfg = exhaustive(4, 1);
        let shape = ModelShape {
            item_vocab: items,
            side_vocabs: vec![3],
            profile_vocabs: vec![3],
        };
        let sides = (0..items).map(|i| vec![if i == 0 { 0 } else { i % 3 }]).collect();
        let catalog = ItemCatalog::from_sides(sides).unwrap();
        let params = init_params(&cfg, &shape, case);
        let inst = &instances(items, 1, case)[0];
        let draws = InstanceDraws::sample(inst, &cfg, items, &mut gen).unwrap();
        assert_eq!(draws.negatives.len(), items - 2);
        let loss = instance_loss(&params, &cfg, &catalog, inst, &draws, None).unwrap();

        let user = oracle::single_vector(&params, &catalog, &inst.behaviors, &inst.profile);
        let expect = oracle::full_softmax_nll(&user, &oracle::item_vectors(&params, &catalog), inst.target);
        assert!((loss - expect).abs() < 1e-10, "case {case}: {loss} vs {expect}");
    }
}

fn train_epochs(
    params: &mut mind_core::ModelParams,
    adam: &mut AdamState,
    range: std::ops::Range<usize>,
    data: &[TrainingInstance],
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Vec<f64> {
    let catalog = ItemCatalog::items_only(30);
    range
        .map(|e| run_epoch(params, adam, &catalog, data, cfg, tc, e, |_| {}).unwrap())
        .collect()
}

#[test]
fn resumed_training_matches_continuous_training() {
    let mut cfg = exhaustive(6, 3);
    cfg.loss = LossConfig::default();
    let shape = ModelShape {
        item_vocab: 30,
        side_vocabs: vec![],
        profile_vocabs: vec![3],
    };
    let data = instances(30, 40, 1);
    let tc = TrainConfig {
        learning_rate: 0.01,
        batch_size: 8,
        epochs: 4,
        final_lr_fraction: 0.2,
        seed: 9,
        ..TrainConfig::default()
    };

    let mut straight = init_params(&cfg, &shape, tc.seed);
    let mut adam = AdamState::new(&straight);
    let all = train_epochs(&mut straight, &mut adam, 0..4, &data, &cfg, &tc);

    let mut first = init_params(&cfg, &shape, tc.seed);
    let mut adam1 = AdamState::new(&first);
    let head = train_epochs(&mut first, &mut adam1, 0..2, &data, &cfg, &tc);
    let bytes = Checkpoint {
        model: cfg.clone(),
        params: first,
        adam: Some(adam1),
        epochs_done: 2,
        item_vocab_digest: "x".into(),
        run_config: serde_json::json!({}),
    }
    .to_bytes()
    .unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let (mut resumed, mut adam2) = (ck.params, ck.adam.unwrap());
    let tail = train_epochs(&mut resumed, &mut adam2, 2..4, &data, &cfg, &tc);

    assert_eq!([head, tail].concat(), all);
    assert_eq!(resumed, straight);
    assert_eq!(adam2, adam);
}

#[test]
fn small_learning_rate_descends_under_the_exact_loss() {
    // one interest: routing has no random start, so full-batch steps are deterministic
    let cfg = exhaustive(8, 1);
    let shape = ModelShape {
        item_vocab: 30,
        side_vocabs: vec![],
        profile_vocabs: vec![3],
    };
    let data = instances(30, 60, 2);
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 60,
        epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut params = init_params(&cfg, &shape, tc.seed);
    let mut adam = AdamState::new(&params);
    let losses = train_epochs(&mut params, &mut adam, 0..10, &data, &cfg, &tc);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}
