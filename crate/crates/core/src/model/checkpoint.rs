//! Versioned binary checkpoint.
//!
//! ```text
//! b"MINDCKPT"  u32 version  u64 header_len  header (JSON)
//! parameter groups as little-endian f64, in ModelParams::groups_ref order
//! [Adam first moments, Adam second moments]   when header.adam_step is set
//! 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::AdamState;
use super::{Dense, ModelConfig, ModelParams, ModelShape, Tower};
use crate::embedding::{EmbeddingTable, ItemTables};
use crate::error::{MindError, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"MINDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    shape: ModelShape,
    profile_dim: usize,
    /// `(input, output)` per tower layer.
    tower: Vec<(usize, usize)>,
    group_sizes: Vec<usize>,
    epochs_done: usize,
    adam_step: Option<u64>,
    item_vocab_digest: String,
    run_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epochs_done: usize,
    pub item_vocab_digest: String,
    /// The full run configuration, stored verbatim.
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups = self.params.groups_ref();
        let header = Header {
            model: self.model.clone(),
            shape: self.params.shape(),
            profile_dim: self.params.profile_tables.first().map_or(self.model.profile_dim, EmbeddingTable::dim),
            tower: self
                .params
                .tower
                .layers
                .iter()
                .map(|l| (l.input_dim(), l.output_dim()))
                .collect(),
            group_sizes: groups.iter().map(|(_, v)| v.len()).collect(),
            epochs_done: self.epochs_done,
            adam_step: self.adam.as_ref().map(|a| a.step),
            item_vocab_digest: self.item_vocab_digest.clone(),
            run_config: self.run_config.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| MindError::format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, vals) in &groups {
            put(vals);
        }
        if let Some(adam) = &self.adam {
            if !adam.matches(&self.params) {
                return Err(MindError::shape("Adam state does not match parameters"));
            }
            for m in adam.first.iter().chain(&adam.second) {
                put(m);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(MindError::format("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(MindError::format("checkpoint checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(MindError::format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| MindError::format("truncated checkpoint header"))?;
        let header: Header =
            serde_json::from_slice(&body[20..hend]).map_err(|e| MindError::format(e.to_string()))?;

        let mut params = skeleton(&header)?;
        let mut cursor = Reader {
            data: &body[hend..],
            pos: 0,
        };
        {
            let groups = params.groups_mut();
            if groups.len() != header.group_sizes.len() {
                return Err(MindError::format("checkpoint group count mismatch"));
            }
            for (g, &n) in groups.into_iter().zip(&header.group_sizes) {
                if g.values.len() != n {
                    return Err(MindError::format(format!("group {} has wrong size", g.name)));
                }
                cursor.fill(g.values)?;
            }
        }
        let adam = match header.adam_step {
            None => None,
            Some(step) => {
                let mut read = || -> Result<Vec<Vec<f64>>> {
                    header
                        .group_sizes
                        .iter()
                        .map(|&n| {
                            let mut v = vec![0.0; n];
                            cursor.fill(&mut v)?;
                            Ok(v)
                        })
                        .collect()
                };
                let first = read()?;
                let second = read()?;
                Some(AdamState { step, first, second })
            }
        };
        if cursor.pos != cursor.data.len() {
            return Err(MindError::format("trailing bytes in checkpoint"));
        }
        params.validate(&header.model)?;
        Ok(Self {
            model: header.model,
            params,
            adam,
            epochs_done: header.epochs_done,
            item_vocab_digest: header.item_vocab_digest,
            run_config: header.run_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save keeps the previous file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fill(&mut self, out: &mut [f64]) -> Result<()> {
        let need = out.len() * 8;
        if self.pos + need > self.data.len() {
            return Err(MindError::format("truncated checkpoint payload"));
        }
        for (k, v) in out.iter_mut().enumerate() {
            let at = self.pos + 8 * k;
            *v = f64::from_le_bytes(self.data[at..at + 8].try_into().expect("8 bytes"));
        }
        self.pos += need;
        Ok(())
    }
}

fn skeleton(h: &Header) -> Result<ModelParams> {
    let d = h.model.dim;
    let layers = h
        .tower
        .iter()
        .map(|&(i, o)| Dense::zeros(i, o))
        .collect::<Vec<_>>();
    Ok(ModelParams {
        item_tables: ItemTables {
            items: EmbeddingTable::zeros(h.shape.item_vocab, d),
            sides: h.shape.side_vocabs.iter().map(|&v| EmbeddingTable::zeros(v, d)).collect(),
        },
        profile_tables: h
            .shape
            .profile_vocabs
            .iter()
            .map(|&v| EmbeddingTable::zeros(v, h.profile_dim))
            .collect(),
        bilinear: Matrix::zeros(d, d),
        tower: Tower::from_layers(layers)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let model = ModelConfig {
            dim: 4,
            profile_dim: 3,
            ..ModelConfig::default()
        };
        let shape = ModelShape {
            item_vocab: 9,
            side_vocabs: vec![3],
            profile_vocabs: vec![4, 2],
        };
        let params = ModelParams::init(&model, &shape, &mut ChaCha8Rng::seed_from_u64(3));
        let mut adam = AdamState::new(&params);
        adam.step = 17;
        adam.first[2][5] = 0.25;
        Checkpoint {
            model,
            params,
            adam: Some(adam),
            epochs_done: 2,
            item_vocab_digest: "feed".into(),
            run_config: serde_json::json!({"seed": 5}),
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
