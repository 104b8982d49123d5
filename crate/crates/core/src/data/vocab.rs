use std::collections::HashMap;

use sha2::{Digest, Sha256};

/// Token reserved at index 0 for padding and unknown ids.
pub const PAD_TOKEN: &str = "<pad>";

/// Bidirectional id ↔ dense index map.
///
/// Index 0 is the padding/unknown slot. Real ids occupy `1..len()` ordered by
/// descending frequency, ties broken by lexicographic id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<String>,
    counts: Vec<u64>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_ids<'a, I>(ids: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for id in ids {
            *freq.entry(id).or_insert(0) += 1;
        }
        let mut entries: Vec<(&str, u64)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_entries(entries.into_iter().map(|(id, c)| (id.to_string(), c)))
    }

    /// Rebuilds a vocabulary from `(id, count)` pairs already in index order
    /// (index 1 first).
    pub fn from_entries<I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut ids = vec![PAD_TOKEN.to_string()];
        let mut counts = vec![0];
        for (id, count) in entries {
            ids.push(id);
            counts.push(count);
        }
        let lookup = ids
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            ids,
            counts,
            lookup,
        }
    }

    /// Number of slots including padding.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// True when only the padding slot exists.
    pub fn is_empty(&self) -> bool {
        self.ids.len() == 1
    }

    /// Index of `id`, or 0 when unseen.
    pub fn index_of(&self, id: &str) -> usize {
        self.lookup.get(id).copied().unwrap_or(0)
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    /// `(index, id, count)` for every real entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, u64)> {
        self.ids
            .iter()
            .zip(&self.counts)
            .enumerate()
            .skip(1)
            .map(|(i, (id, &c))| (i, id.as_str(), c))
    }

    /// SHA-256 over the serialized table, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, id, c) in self.entries() {
            hasher.update(format!("{i}\t{id}\t{c}\n").as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}
