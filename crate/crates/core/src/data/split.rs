use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InteractionRecord, ProfileTable, Vocabulary};
use crate::error::{MindError, Result};

/// One next-item prediction example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub user_id: String,
    /// Item indices of earlier interactions, oldest first.
    pub behaviors: Vec<usize>,
    /// One index per profile feature, 0 when unknown.
    pub profile: Vec<usize>,
    pub target: usize,
    pub target_timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Interaction pairs per test pair plus one (20 for a 19:1 split).
    pub ratio_denominator: usize,
    pub seed: u64,
    /// Most recent behaviors kept per instance.
    pub max_behaviors: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio_denominator: 20,
            seed: 0,
            max_behaviors: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<TrainingInstance>,
    pub test: Vec<TrainingInstance>,
    pub seed: u64,
    /// Users dropped for having fewer than two distinct items.
    pub skipped_users: usize,
    /// Pairs whose behavior list came out empty.
    pub discarded_instances: usize,
    /// Distinct user-item pairs assigned to each side, before discarding.
    pub train_pairs: usize,
    pub test_pairs: usize,
}

#[derive(Debug, Clone)]
struct Pair {
    item: usize,
    timestamp: i64,
    test: bool,
}

/// Assigns distinct user-item pairs to train/test at `1 : denominator-1`
/// globally, then turns every pair into an instance whose behaviors are the
/// user's strictly earlier items.
///
/// Train behaviors only draw from train pairs, so no test label is ever seen
/// during training. Test behaviors draw from the user's whole history.
/// Repeated interactions with one item collapse to the earliest.
pub fn split_and_build(
    records: &[InteractionRecord],
    items: &Vocabulary,
    profiles: &ProfileTable,
    profile_vocabs: &[Vocabulary],
    cfg: &SplitConfig,
) -> Result<DatasetSplit> {
    if cfg.ratio_denominator < 2 {
        return Err(MindError::config("split ratio denominator must be at least 2"));
    }
    if cfg.max_behaviors == 0 {
        return Err(MindError::config("max_behaviors must be at least 1"));
    }

    // earliest interaction per (user, item); BTreeMap keeps user order stable
    let mut by_user: BTreeMap<&str, Vec<(i64, usize, usize)>> = BTreeMap::new();
    let mut seen: HashMap<(&str, usize), usize> = HashMap::new();
    for (pos, r) in records.iter().enumerate() {
        let item = items.index_of(&r.item_id);
        if item == 0 {
            continue;
        }
        let list = by_user.entry(r.user_id.as_str()).or_default();
        match seen.get(&(r.user_id.as_str(), item)) {
            Some(&slot) => {
                if r.timestamp < list[slot].0 {
                    list[slot].0 = r.timestamp;
                }
            }
            None => {
                seen.insert((r.user_id.as_str(), item), list.len());
                list.push((r.timestamp, pos, item));
            }
        }
    }

    let mut skipped_users = 0;
    let mut users: Vec<(&str, Vec<Pair>)> = Vec::new();
    for (user, mut list) in by_user {
        if list.len() < 2 {
            skipped_users += 1;
            continue;
        }
        list.sort_unstable();
        users.push((
            user,
            list.into_iter()
                .map(|(timestamp, _, item)| Pair {
                    item,
                    timestamp,
                    test: false,
                })
                .collect(),
        ));
    }

    let total: usize = users.iter().map(|(_, p)| p.len()).sum();
    let n_test = (total + cfg.ratio_denominator / 2) / cfg.ratio_denominator;
    let mut order: Vec<(usize, usize)> = users
        .iter()
        .enumerate()
        .flat_map(|(u, (_, pairs))| (0..pairs.len()).map(move |k| (u, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    for &(u, k) in &order[..n_test] {
        users[u].1[k].test = true;
    }

    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed: cfg.seed,
        skipped_users,
        discarded_instances: 0,
        train_pairs: total - n_test,
        test_pairs: n_test,
    };
    for (user, pairs) in &users {
        let profile = profiles.indices(user, profile_vocabs);
        for target in pairs {
            let mut behaviors: Vec<usize> = pairs
                .iter()
                .filter(|p| p.timestamp < target.timestamp && (target.test || !p.test))
                .map(|p| p.item)
                .collect();
            if behaviors.is_empty() {
                split.discarded_instances += 1;
                continue;
            }
            if behaviors.len() > cfg.max_behaviors {
                behaviors.drain(..behaviors.len() - cfg.max_behaviors);
            }
            let inst = TrainingInstance {
                user_id: user.to_string(),
                behaviors,
                profile: profile.clone(),
                target: target.item,
                target_timestamp: target.timestamp,
            };
            if target.test {
                split.test.push(inst);
            } else {
                split.train.push(inst);
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_item_vocabulary;

    fn build(records: &[InteractionRecord], seed: u64, denom: usize) -> DatasetSplit {
        let items = build_item_vocabulary(records);
        let cfg = SplitConfig {
            ratio_denominator: denom,
            seed,
            max_behaviors: 50,
        };
        split_and_build(records, &items, &ProfileTable::default(), &[], &cfg).unwrap()
    }

    #[test]
    fn behaviors_are_strictly_earlier_in_order() {
        let recs = vec![
            InteractionRecord::new("u", "a", &[], 1),
            InteractionRecord::new("u", "b", &[], 2),
            InteractionRecord::new("u", "c", &[], 3),
        ];
        // denominator large enough that nothing lands in test
        let split = build(&recs, 1, 1000);
        let items = build_item_vocabulary(&recs);
        let last = split
            .train
            .iter()
            .find(|i| i.target == items.index_of("c"))
            .unwrap();
        assert_eq!(last.behaviors, vec![items.index_of("a"), items.index_of("b")]);
        // the earliest pair has no history and is discarded
        assert_eq!(split.discarded_instances, 1);
    }

    #[test]
    fn single_interaction_users_are_skipped() {
        let recs = vec![
            InteractionRecord::new("solo", "a", &[], 1),
            InteractionRecord::new("u", "a", &[], 1),
            InteractionRecord::new("u", "b", &[], 2),
        ];
        let split = build(&recs, 0, 1000);
        assert_eq!(split.skipped_users, 1);
    }

    #[test]
    fn equal_timestamps_are_not_behaviors() {
        let recs = vec![
            InteractionRecord::new("u", "a", &[], 5),
            InteractionRecord::new("u", "b", &[], 5),
        ];
        let split = build(&recs, 0, 1000);
        assert!(split.train.is_empty());
        assert_eq!(split.discarded_instances, 2);
    }

    #[test]
    fn truncates_to_most_recent() {
        let recs: Vec<_> = (0..10)
            .map(|t| InteractionRecord::new("u", &format!("i{t}"), &[], t))
            .collect();
        let items = build_item_vocabulary(&recs);
        let cfg = SplitConfig {
            ratio_denominator: 1000,
            seed: 0,
            max_behaviors: 3,
        };
        let split = split_and_build(&recs, &items, &ProfileTable::default(), &[], &cfg).unwrap();
        let last = split
            .train
            .iter()
            .find(|i| i.target == items.index_of("i9"))
            .unwrap();
        let expect: Vec<usize> = ["i6", "i7", "i8"].iter().map(|i| items.index_of(i)).collect();
        assert_eq!(last.behaviors, expect);
    }

    #[test]
    fn test_fraction_near_one_in_twenty() {
        let recs: Vec<_> = (0..1000)
            .map(|k| InteractionRecord::new(&format!("u{}", k / 10), &format!("i{}", k % 37), &[], k as i64))
            .collect();
        let split = build(&recs, 3, 20);
        let total = split.train.len() + split.test.len() + split.discarded_instances;
        assert_eq!(total, 1000);
        assert_eq!(split.train_pairs + split.test_pairs, 1000);
        let frac = split.test_pairs as f64 / 1000.0;
        assert!((frac - 0.05).abs() <= 0.01, "test fraction {frac}");
    }

    #[test]
    fn same_seed_same_split() {
        let recs: Vec<_> = (0..300)
            .map(|k| InteractionRecord::new(&format!("u{}", k % 7), &format!("i{}", k % 41), &[], k as i64))
            .collect();
        assert_eq!(build(&recs, 9, 20), build(&recs, 9, 20));
        assert_ne!(build(&recs, 9, 20).test, build(&recs, 10, 20).test);
    }
}
