//! Fixed artifact names inside the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use sgrec::dataset::{SplitDataset, Vocabulary};
use sgrec_tensor::Checkpoint;

use crate::failure::Failure;

pub const VOCAB: &str = "vocab";
pub const SPLITS: &str = "splits";
pub const SBR_CHECKPOINT: &str = "sbr.ckpt";
pub const FULL_CHECKPOINT: &str = "full.ckpt";
pub const PCA: &str = "pca.csv";

pub struct RunDir<'a>(pub &'a Path);

impl RunDir<'_> {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        fs::create_dir_all(self.0)?;
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// `(vocabulary, titles)`.
    pub fn read_vocab(&self) -> Result<(Vocabulary, Vec<String>), Failure> {
        let text = self.require(VOCAB, "vocabulary", "ingest")?;
        let (ids, titles) = text
            .lines()
            .map(|l| {
                let (id, title) = l.split_once('\t').unwrap_or((l, ""));
                (id.to_string(), title.to_string())
            })
            .unzip();
        Ok((Vocabulary::from_ids(ids), titles))
    }

    pub fn write_vocab(&self, vocab: &Vocabulary, titles: &[String]) -> Result<PathBuf, Failure> {
        let mut s = String::new();
        for (id, t) in vocab.ids().iter().zip(titles) {
            writeln!(s, "{id}\t{t}").unwrap();
        }
        self.write(VOCAB, s)
    }

    pub fn read_splits(&self) -> Result<SplitDataset, Failure> {
        let text = self.require(SPLITS, "splits", "ingest")?;
        serde_json::from_str(&text).map_err(|e| Failure::artifact(format!("{} is corrupt: {e}", self.path(SPLITS).display())))
    }

    pub fn write_splits(&self, split: &SplitDataset) -> Result<PathBuf, Failure> {
        let json = serde_json::to_string(split).map_err(|e| Failure::artifact(e))?;
        self.write(SPLITS, json)
    }

    pub fn checkpoint(&self, name: &str, producer: &str) -> Result<Checkpoint, Failure> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Failure::artifact(format!("checkpoint not found; run {producer}")));
        }
        Checkpoint::load(&path).map_err(|e| Failure::artifact(format!("{}: {e}", path.display())))
    }

    fn require(&self, name: &str, what: &str, producer: &str) -> Result<String, Failure> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Failure::artifact(format!("{what} not found; run {producer}")));
        }
        Ok(fs::read_to_string(&path)?)
    }
}
