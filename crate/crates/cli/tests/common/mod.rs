#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL: &str = r#"
seed = 3
output_dir = "run"

[synthetic]
users = 60
clusters = 4
items_per_cluster = 8
clusters_per_user = 2
categories = 4
interactions_per_user = 10

[model]
dim = 4
profile_dim = 2

[train]
epochs = 2
batch_size = 32
learning_rate = 0.01

[eval]
cutoffs = [5, 10]
seeds = [0, 1]
interests = [1, 3]
sigma_grid = [0.5, 2.0]
p_grid = [0, "hard"]
candidates = 5
"#;

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.toml")
    }

    /// `mind <sub> -c config.toml <rest...>`
    pub fn run(&self, sub: &str, rest: &[&str]) -> Output {
        let config = self.config();
        let mut args = vec![sub, "-c", config.to_str().unwrap()];
        args.extend_from_slice(rest);
        mind(self.dir.path(), &args)
    }

    pub fn ok(&self, sub: &str, rest: &[&str]) -> String {
        let out = self.run(sub, rest);
        assert!(
            out.status.success(),
            "mind {sub} {rest:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn text(&self, rel: &str) -> String {
        String::from_utf8(self.read(rel)).unwrap()
    }
}

pub fn mind(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mind"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

/// Training log with the wall-clock column removed.
pub fn log_without_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| match l.rsplit_once('\t') {
            Some((head, _)) if !l.starts_with('#') => head.to_string(),
            _ => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
