//! Interaction logs, filtering, vocabularies and next-item instances.
//!
//! Log lines are `user_id, item_id, [side_id ...], timestamp`, delimited by
//! tabs when the line contains one and by commas otherwise. Side ids are
//! positional (position 0 is typically the category); an empty field marks the
//! feature absent for that record.

mod io;
mod split;
mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

pub use io::{
    read_instances, write_instances, PreparedData, SplitManifest, INSTANCE_FORMAT,
    MANIFEST_FORMAT,
};
pub use split::{split_and_build, DatasetSplit, SplitConfig, TrainingInstance};
pub use vocab::{Vocabulary, PAD_TOKEN};

use crate::error::{MindError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    /// Positional side ids; an empty string means absent.
    pub side_ids: Vec<String>,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(user: &str, item: &str, sides: &[&str], timestamp: i64) -> Self {
        Self {
            user_id: user.to_string(),
            item_id: item.to_string(),
            side_ids: sides.iter().map(|s| s.to_string()).collect(),
            timestamp,
        }
    }

    /// Formats the record as a comma-delimited log line.
    pub fn to_line(&self) -> String {
        let mut fields = vec![self.user_id.as_str(), self.item_id.as_str()];
        fields.extend(self.side_ids.iter().map(String::as_str));
        let ts = self.timestamp.to_string();
        fields.push(&ts);
        fields.join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<InteractionRecord>,
    pub errors: Vec<LineError>,
}

/// Parses one log line. Blank lines and `#` comments yield `Ok(None)`.
pub fn parse_line(line: &str) -> Result<Option<InteractionRecord>, String> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let delim = if line.contains('\t') { '\t' } else { ',' };
    let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
    if fields.len() < 3 {
        return Err(format!("expected at least 3 fields, found {}", fields.len()));
    }
    let (user, item) = (fields[0], fields[1]);
    if user.is_empty() {
        return Err("empty user id".into());
    }
    if item.is_empty() {
        return Err("empty item id".into());
    }
    let ts_field = fields[fields.len() - 1];
    let timestamp: i64 = ts_field
        .parse()
        .map_err(|_| format!("bad timestamp {ts_field:?}"))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    Ok(Some(InteractionRecord {
        user_id: user.to_string(),
        item_id: item.to_string(),
        side_ids: fields[2..fields.len() - 1]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        timestamp,
    }))
}

/// Reads every line of `source`. Malformed lines are reported with their line
/// number; only I/O failures abort.
pub fn ingest_interactions<R: BufRead>(source: R) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        match parse_line(&line) {
            Ok(Some(rec)) => report.records.push(rec),
            Ok(None) => {}
            Err(message) => report.errors.push(LineError {
                line: n + 1,
                message,
            }),
        }
    }
    Ok(report)
}

/// Repeatedly drops items with fewer than `min_item` interactions and users
/// with fewer than `min_user` until nothing changes. Input order is kept.
pub fn filter_dataset(
    records: &[InteractionRecord],
    min_item: usize,
    min_user: usize,
) -> Vec<InteractionRecord> {
    let mut kept: Vec<InteractionRecord> = records.to_vec();
    loop {
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            *item_counts.entry(&r.item_id).or_default() += 1;
            *user_counts.entry(&r.user_id).or_default() += 1;
        }
        let keep: Vec<bool> = kept
            .iter()
            .map(|r| item_counts[r.item_id.as_str()] >= min_item && user_counts[r.user_id.as_str()] >= min_user)
            .collect();
        if keep.iter().all(|&k| k) {
            return kept;
        }
        let mut flags = keep.into_iter();
        kept.retain(|_| flags.next().unwrap_or(false));
    }
}

/// Number of positional side features present anywhere in `records`.
pub fn side_feature_count(records: &[InteractionRecord]) -> usize {
    records.iter().map(|r| r.side_ids.len()).max().unwrap_or(0)
}

/// Builds the item vocabulary (counts are interactions per item).
pub fn build_item_vocabulary(records: &[InteractionRecord]) -> Vocabulary {
    Vocabulary::from_ids(records.iter().map(|r| r.item_id.as_str()))
}

/// Builds the vocabulary of side feature `position`, skipping absent fields.
pub fn build_side_vocabulary(records: &[InteractionRecord], position: usize) -> Vocabulary {
    Vocabulary::from_ids(
        records
            .iter()
            .filter_map(|r| r.side_ids.get(position))
            .map(String::as_str)
            .filter(|s| !s.is_empty()),
    )
}

/// Per-item side feature indices, `sides[item][feature]`, 0 meaning absent.
///
/// Each item takes the side ids of its first record in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ItemCatalog {
    sides: Vec<Vec<usize>>,
    feature_count: usize,
}

impl ItemCatalog {
    pub fn build(
        records: &[InteractionRecord],
        items: &Vocabulary,
        side_vocabs: &[Vocabulary],
    ) -> Self {
        let mut sides = vec![vec![0; side_vocabs.len()]; items.len()];
        let mut seen = vec![false; items.len()];
        for r in records {
            let idx = items.index_of(&r.item_id);
            if idx == 0 || seen[idx] {
                continue;
            }
            seen[idx] = true;
            for (f, vocab) in side_vocabs.iter().enumerate() {
                sides[idx][f] = r.side_ids.get(f).map_or(0, |s| vocab.index_of(s));
            }
        }
        Self {
            sides,
            feature_count: side_vocabs.len(),
        }
    }

    /// Catalog with no side features for `num_items` slots (padding included).
    pub fn items_only(num_items: usize) -> Self {
        Self {
            sides: vec![Vec::new(); num_items],
            feature_count: 0,
        }
    }

    pub fn from_sides(sides: Vec<Vec<usize>>) -> Result<Self> {
        let feature_count = sides.first().map_or(0, Vec::len);
        if sides.iter().any(|s| s.len() != feature_count) {
            return Err(MindError::data("ragged item side feature table"));
        }
        Ok(Self {
            sides,
            feature_count,
        })
    }

    pub fn num_items(&self) -> usize {
        self.sides.len()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn sides(&self, item: usize) -> &[usize] {
        &self.sides[item]
    }
}

/// Categorical profile features per user, read from lines
/// `user_id,feature_0,feature_1,...` (tab or comma delimited).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileTable {
    pub by_user: BTreeMap<String, Vec<String>>,
}

impl ProfileTable {
    pub fn parse<R: BufRead>(source: R) -> Result<Self> {
        let mut by_user = BTreeMap::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let delim = if line.contains('\t') { '\t' } else { ',' };
            let mut fields = line.split(delim).map(str::trim);
            let user = fields.next().unwrap_or_default();
            if user.is_empty() {
                return Err(MindError::data(format!("profile line {}: empty user id", n + 1)));
            }
            by_user.insert(user.to_string(), fields.map(String::from).collect());
        }
        Ok(Self { by_user })
    }

    pub fn feature_count(&self) -> usize {
        self.by_user.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn vocabulary(&self, position: usize) -> Vocabulary {
        Vocabulary::from_ids(
            self.by_user
                .values()
                .filter_map(|f| f.get(position))
                .map(String::as_str)
                .filter(|s| !s.is_empty()),
        )
    }

    /// Profile indices for `user`; unknown users and fields map to 0.
    pub fn indices(&self, user: &str, vocabs: &[Vocabulary]) -> Vec<usize> {
        let fields = self.by_user.get(user);
        vocabs
            .iter()
            .enumerate()
            .map(|(f, v)| {
                fields
                    .and_then(|fs| fs.get(f))
                    .map_or(0, |s| v.index_of(s))
            })
            .collect()
    }
}
