//! On-disk layout of a prepared dataset directory.
//!
//! ```text
//! manifest.txt        key<TAB>value lines, first line "format<TAB>mind-split-manifest/1"
//! items.vocab         index<TAB>id<TAB>count, index 1 first
//! side_<k>.vocab      same layout, one per positional side feature
//! profile_<k>.vocab   same layout, one per profile feature
//! item_features.tsv   item_index<TAB>side indices (comma separated, 0 = absent)
//! train.tsv, test.tsv user_id<TAB>target<TAB>target_timestamp<TAB>behaviors<TAB>profile
//! ```
//!
//! Behaviors and profile are comma-separated indices; an empty profile is an
//! empty field. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{
    build_item_vocabulary, build_side_vocabulary, filter_dataset, side_feature_count,
    split_and_build, DatasetSplit, InteractionRecord, ItemCatalog, ProfileTable, SplitConfig,
    TrainingInstance, Vocabulary,
};
use crate::error::{MindError, Result};

pub const MANIFEST_FORMAT: &str = "mind-split-manifest/1";
pub const INSTANCE_FORMAT: &str = "# mind-instances v1";
const VOCAB_HEADER: &str = "# mind-vocab v1";

/// Summary written next to the instance files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub min_item_interactions: usize,
    pub min_user_interactions: usize,
    pub ratio_denominator: usize,
    pub max_behaviors: usize,
    pub records: usize,
    pub users: usize,
    pub items: usize,
    pub train_instances: usize,
    pub test_instances: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub skipped_users: usize,
    pub discarded_instances: usize,
    pub item_vocab_digest: String,
    /// SHA-256 over both instance files.
    pub split_digest: String,
    /// Digest of the run configuration that produced the split, `-` if none.
    pub config_digest: String,
}

impl SplitManifest {
    fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("format", &MANIFEST_FORMAT);
        kv("seed", &self.seed);
        kv("min_item_interactions", &self.min_item_interactions);
        kv("min_user_interactions", &self.min_user_interactions);
        kv("ratio_denominator", &self.ratio_denominator);
        kv("max_behaviors", &self.max_behaviors);
        kv("records", &self.records);
        kv("users", &self.users);
        kv("items", &self.items);
        kv("train_instances", &self.train_instances);
        kv("test_instances", &self.test_instances);
        kv("train_pairs", &self.train_pairs);
        kv("test_pairs", &self.test_pairs);
        kv("skipped_users", &self.skipped_users);
        kv("discarded_instances", &self.discarded_instances);
        kv("item_vocab_digest", &self.item_vocab_digest);
        kv("split_digest", &self.split_digest);
        kv("config_digest", &self.config_digest);
        out
    }

    fn parse(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| l.split_once('\t'))
            .collect();
        if map.get("format") != Some(&MANIFEST_FORMAT) {
            return Err(MindError::format("manifest: missing or unsupported format line"));
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| MindError::format(format!("manifest: missing key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| MindError::format(format!("manifest: bad value for {k}")))
        };
        Ok(Self {
            seed: get("seed")?
                .parse()
                .map_err(|_| MindError::format("manifest: bad seed"))?,
            min_item_interactions: num("min_item_interactions")?,
            min_user_interactions: num("min_user_interactions")?,
            ratio_denominator: num("ratio_denominator")?,
            max_behaviors: num("max_behaviors")?,
            records: num("records")?,
            users: num("users")?,
            items: num("items")?,
            train_instances: num("train_instances")?,
            test_instances: num("test_instances")?,
            train_pairs: num("train_pairs")?,
            test_pairs: num("test_pairs")?,
            skipped_users: num("skipped_users")?,
            discarded_instances: num("discarded_instances")?,
            item_vocab_digest: get("item_vocab_digest")?.to_string(),
            split_digest: get("split_digest")?.to_string(),
            config_digest: map.get("config_digest").unwrap_or(&"-").to_string(),
        })
    }
}

/// Everything the model and evaluation need from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub items: Vocabulary,
    pub side_vocabs: Vec<Vocabulary>,
    pub profile_vocabs: Vec<Vocabulary>,
    pub catalog: ItemCatalog,
    pub split: DatasetSplit,
    pub manifest: SplitManifest,
}

impl PreparedData {
    /// Filter, build vocabularies, split and construct instances.
    pub fn build(
        records: &[InteractionRecord],
        profiles: &ProfileTable,
        min_item: usize,
        min_user: usize,
        split_cfg: &SplitConfig,
    ) -> Result<Self> {
        if min_item == 0 || min_user == 0 {
            return Err(MindError::config("filter thresholds must be at least 1"));
        }
        let kept = filter_dataset(records, min_item, min_user);
        if kept.is_empty() {
            return Err(MindError::data("no interactions left after filtering"));
        }
        let items = build_item_vocabulary(&kept);
        let side_vocabs: Vec<Vocabulary> = (0..side_feature_count(&kept))
            .map(|p| build_side_vocabulary(&kept, p))
            .collect();
        let profile_vocabs: Vec<Vocabulary> = (0..profiles.feature_count())
            .map(|p| profiles.vocabulary(p))
            .collect();
        let catalog = ItemCatalog::build(&kept, &items, &side_vocabs);
        let split = split_and_build(&kept, &items, profiles, &profile_vocabs, split_cfg)?;
        let users = kept
            .iter()
            .map(|r| r.user_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let manifest = SplitManifest {
            seed: split_cfg.seed,
            min_item_interactions: min_item,
            min_user_interactions: min_user,
            ratio_denominator: split_cfg.ratio_denominator,
            max_behaviors: split_cfg.max_behaviors,
            records: kept.len(),
            users,
            items: items.len() - 1,
            train_instances: split.train.len(),
            test_instances: split.test.len(),
            train_pairs: split.train_pairs,
            test_pairs: split.test_pairs,
            skipped_users: split.skipped_users,
            discarded_instances: split.discarded_instances,
            item_vocab_digest: items.digest(),
            split_digest: split_digest(&split.train, &split.test),
            config_digest: "-".to_string(),
        };
        Ok(Self {
            items,
            side_vocabs,
            profile_vocabs,
            catalog,
            split,
            manifest,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.txt"), self.manifest.to_text())?;
        write_vocab(&dir.join("items.vocab"), &self.items)?;
        for (k, v) in self.side_vocabs.iter().enumerate() {
            write_vocab(&dir.join(format!("side_{k}.vocab")), v)?;
        }
        for (k, v) in self.profile_vocabs.iter().enumerate() {
            write_vocab(&dir.join(format!("profile_{k}.vocab")), v)?;
        }
        let mut feats = String::from("# mind-item-features v1\n");
        for item in 1..self.catalog.num_items() {
            let _ = writeln!(feats, "{item}\t{}", join(self.catalog.sides(item)));
        }
        fs::write(dir.join("item_features.tsv"), feats)?;
        fs::write(dir.join("train.tsv"), instances_text(&self.split.train))?;
        fs::write(dir.join("test.tsv"), instances_text(&self.split.test))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = SplitManifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        let items = read_vocab(&dir.join("items.vocab"))?;
        if items.digest() != manifest.item_vocab_digest {
            return Err(MindError::data("item vocabulary does not match manifest digest"));
        }
        let side_vocabs = read_numbered_vocabs(dir, "side")?;
        let profile_vocabs = read_numbered_vocabs(dir, "profile")?;

        let mut sides = vec![vec![0; side_vocabs.len()]; items.len()];
        let feats = fs::read_to_string(dir.join("item_features.tsv"))?;
        for line in feats.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let (idx, rest) = line
                .split_once('\t')
                .ok_or_else(|| MindError::format("item_features: missing tab"))?;
            let idx: usize = parse_num(idx)?;
            let row = parse_list(rest)?;
            if idx >= items.len() || row.len() != side_vocabs.len() {
                return Err(MindError::format(format!("item_features: bad row for item {idx}")));
            }
            sides[idx] = row;
        }
        let catalog = ItemCatalog::from_sides(sides)?;

        let train = read_instances(BufReader::new(fs::File::open(dir.join("train.tsv"))?))?;
        let test = read_instances(BufReader::new(fs::File::open(dir.join("test.tsv"))?))?;
        if split_digest(&train, &test) != manifest.split_digest {
            return Err(MindError::data("instance files do not match manifest digest"));
        }
        let split = DatasetSplit {
            train,
            test,
            seed: manifest.seed,
            skipped_users: manifest.skipped_users,
            discarded_instances: manifest.discarded_instances,
            train_pairs: manifest.train_pairs,
            test_pairs: manifest.test_pairs,
        };
        Ok(Self {
            items,
            side_vocabs,
            profile_vocabs,
            catalog,
            split,
            manifest,
        })
    }

    /// Item vocabulary size including padding.
    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

fn split_digest(train: &[TrainingInstance], test: &[TrainingInstance]) -> String {
    let mut h = Sha256::new();
    h.update(instances_text(train).as_bytes());
    h.update(b"--\n");
    h.update(instances_text(test).as_bytes());
    hex::encode(h.finalize())
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_num(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| MindError::format(format!("bad index {s:?}")))
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_num).collect()
}

fn instances_text(instances: &[TrainingInstance]) -> String {
    let mut out = String::from(INSTANCE_FORMAT);
    out.push('\n');
    for inst in instances {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            inst.user_id,
            inst.target,
            inst.target_timestamp,
            join(&inst.behaviors),
            join(&inst.profile)
        );
    }
    out
}

pub fn write_instances<W: Write>(mut w: W, instances: &[TrainingInstance]) -> Result<()> {
    w.write_all(instances_text(instances).as_bytes())?;
    Ok(())
}

pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(MindError::format(format!(
                "instance line {}: expected 5 fields, found {}",
                n + 1,
                fields.len()
            )));
        }
        let behaviors = parse_list(fields[3])?;
        if behaviors.is_empty() {
            return Err(MindError::format(format!("instance line {}: no behaviors", n + 1)));
        }
        out.push(TrainingInstance {
            user_id: fields[0].to_string(),
            target: parse_num(fields[1])?,
            target_timestamp: fields[2]
                .parse()
                .map_err(|_| MindError::format(format!("instance line {}: bad timestamp", n + 1)))?,
            behaviors,
            profile: parse_list(fields[4])?,
        });
    }
    Ok(out)
}

fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::from(VOCAB_HEADER);
    out.push('\n');
    for (i, id, c) in vocab.entries() {
        let _ = writeln!(out, "{i}\t{id}\t{c}");
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(MindError::format(format!("{}: bad vocab line", path.display())));
        }
        let idx = parse_num(f[0])?;
        if idx != entries.len() + 1 {
            return Err(MindError::format(format!("{}: indices not contiguous", path.display())));
        }
        let count: u64 = f[2]
            .parse()
            .map_err(|_| MindError::format(format!("{}: bad count", path.display())))?;
        entries.push((f[1].to_string(), count));
    }
    Ok(Vocabulary::from_entries(entries))
}

fn read_numbered_vocabs(dir: &Path, prefix: &str) -> Result<Vec<Vocabulary>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{prefix}_{}.vocab", out.len()));
        if !path.exists() {
            return Ok(out);
        }
        out.push(read_vocab(&path)?);
    }
}
