//! Run configuration: one TOML file plus `--set key=value` overrides.
//!
//! ```toml
//! seed = 7                      # required
//! output_dir = "runs/demo"      # relative paths resolve against the file
//! checkpoint_every = 1          # epochs; 0 writes only the final checkpoint
//!
//! [data]      log, profiles, prepared, thresholds, split
//! [synthetic] generator settings for `prepare --synthetic`
//! [model]     dim, routing, attention, loss, tower, init scales
//! [train]     learning rate, Adam, batch size, epochs, decay
//! [eval]      cutoffs, retrieval, seeds and grids for sweeps
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use mind_core::evaluation::{EvalSettings, RetrievalMode};
use mind_core::synthetic::SyntheticConfig;
use mind_core::{Attention, MindError, ModelConfig, SplitConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log, `user,item[,side...],timestamp` per line.
    pub log: Option<PathBuf>,
    /// Optional `user,feature...` lines.
    pub profiles: Option<PathBuf>,
    /// Prepared dataset directory; `<output_dir>/data` when unset.
    pub prepared: Option<PathBuf>,
    pub min_item_interactions: usize,
    pub min_user_interactions: usize,
    /// 20 gives a 19:1 train/test split.
    pub ratio_denominator: usize,
    pub max_behaviors: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let split = SplitConfig::default();
        Self {
            log: None,
            profiles: None,
            prepared: None,
            min_item_interactions: 1,
            min_user_interactions: 1,
            ratio_denominator: split.ratio_denominator,
            max_behaviors: split.max_behaviors,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub retrieval: RetrievalMode,
    /// Training seeds for comparisons and sweeps.
    pub seeds: Vec<u64>,
    /// Interest caps compared by `sweep method`; popularity is always added.
    pub interests: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    pub p_grid: Vec<Attention>,
    /// Candidates per interest in the similarity histogram.
    pub candidates: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: vec![10, 50, 100],
            retrieval: RetrievalMode::Exact,
            seeds: vec![0, 1, 2, 3, 4],
            interests: vec![1, 5],
            sigma_grid: vec![0.1, 1.0, 5.0],
            p_grid: vec![
                Attention::Power(0.0),
                Attention::Power(1.0),
                Attention::Power(2.0),
                Attention::Power(4.0),
                Attention::Hard,
            ],
            candidates: 50,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_checkpoint_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Sets `path` (dot separated) in `table` to `raw`, read as a TOML value when
/// it parses as one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| MindError::config(format!("override {assignment:?} is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!(MindError::config(format!("bad override key {path:?}")));
    }
    let (last, parents) = keys.split_last().expect("non-empty split");
    let mut node = table;
    for key in parents {
        node = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| MindError::config(format!("override {path:?}: {key} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| MindError::config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| MindError::config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| MindError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        for p in [&mut cfg.data.log, &mut cfg.data.profiles, &mut cfg.data.prepared]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> mind_core::Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.eval_settings().validate()?;
        if self.data.min_item_interactions == 0 || self.data.min_user_interactions == 0 {
            return Err(MindError::config("filter thresholds must be at least 1"));
        }
        if self.data.ratio_denominator < 2 || self.data.max_behaviors == 0 {
            return Err(MindError::config("split ratio must be at least 2 and max_behaviors at least 1"));
        }
        if self.eval.seeds.is_empty() || self.eval.interests.contains(&0) {
            return Err(MindError::config("eval needs seeds and positive interest caps"));
        }
        if self.eval.candidates == 0 {
            return Err(MindError::config("eval.candidates must be at least 1"));
        }
        if let RetrievalMode::Approximate { partitions, probes } = self.eval.retrieval {
            if partitions == 0 || probes == 0 {
                return Err(MindError::config("partitions and probes must be at least 1"));
            }
        }
        Ok(())
    }

    /// The configuration as stored in artifacts: everything except where the
    /// artifacts are written.
    pub fn canonical(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        v
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().to_string().as_bytes()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            cutoffs: self.eval.cutoffs.clone(),
            retrieval: self.eval.retrieval,
            serve_seed: self.seed,
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            ratio_denominator: self.data.ratio_denominator,
            seed: self.data.split_seed,
            max_behaviors: self.data.max_behaviors,
        }
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.data
            .prepared
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("checkpoint.mind")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.output_dir.join("train_log.tsv")
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    /// Canonical config of a checkpoint with the epoch count dropped, for
    /// checking that a resumed run continues the same experiment.
    pub fn resume_key(value: &serde_json::Value) -> anyhow::Result<serde_json::Value> {
        let mut v = value.clone();
        v.get_mut("train")
            .and_then(|t| t.as_object_mut())
            .ok_or_else(|| anyhow!("stored run config has no train section"))
            .context("checkpoint")?
            .remove("epochs");
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_required() {
        let err = RunConfig::parse("", &[]).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(RunConfig::parse("seed = 3", &[]).unwrap().seed, 3);
    }

    #[test]
    fn overrides_win_and_nest() {
        let cfg = RunConfig::parse(
            "seed = 1\n[model]\ndim = 8\n",
            &[
                "model.dim=12".into(),
                "model.routing.sigma=5".into(),
                "model.attention=hard".into(),
                "eval.p_grid=[0, \"hard\"]".into(),
                "output_dir=out/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.dim, 12);
        assert_eq!(cfg.model.routing.sigma, 5.0);
        assert_eq!(cfg.model.attention, Attention::Hard);
        assert_eq!(cfg.eval.p_grid, vec![Attention::Power(0.0), Attention::Hard]);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("seed = 1\n[model]\ndimm = 3\n", &[]).is_err());
        assert!(RunConfig::parse("seed = 1", &["model.dim=0".into()]).is_err());
        assert!(RunConfig::parse("seed = 1", &["nokey".into()]).is_err());
        assert!(RunConfig::parse("seed = 1", &["model.dim.x=1".into()]).is_err());
        assert!(RunConfig::parse("seed = 1\n[train]\nseed = 4\n", &[]).is_err());
    }

    #[test]
    fn digest_ignores_output_dir_only() {
        let a = RunConfig::parse("seed = 1", &[]).unwrap();
        let b = RunConfig::parse("seed = 1\noutput_dir = \"elsewhere\"", &[]).unwrap();
        let c = RunConfig::parse("seed = 2", &[]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn run_seed_drives_training_and_serving() {
        let cfg = RunConfig::parse("seed = 9", &[]).unwrap();
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.eval_settings().serve_seed, 9);
    }

    #[test]
    fn resume_key_drops_epochs() {
        let a = RunConfig::parse("seed = 1", &["train.epochs=2".into()]).unwrap();
        let b = RunConfig::parse("seed = 1", &["train.epochs=5".into()]).unwrap();
        let c = RunConfig::parse("seed = 1", &["train.learning_rate=0.5".into()]).unwrap();
        let key = |c: &RunConfig| RunConfig::resume_key(&c.canonical()).unwrap();
        assert_eq!(key(&a), key(&b));
        assert_ne!(key(&a), key(&c));
    }
}
