//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::dataset::MAX_SEQUENCE_LEN;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_COLD_THRESHOLD, DEFAULT_KS, DEFAULT_NEGATIVES};
use crate::graph::Adjacency;
use crate::llm::LlmConfig;
use crate::model::ModelConfig;
use crate::pretrain::PretrainConfig;
use crate::prompt::CorpusOptions;
use crate::sbr::{Backend, SbrConfig};
use crate::tuning::{Strategy, TuneConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub min_count: usize,
    pub max_seq_len: usize,
    pub model: ModelConfig,
    pub corpus: CorpusOptions,
    pub pretrain: PretrainConfig,
    pub tune: TuneConfig,
    pub ks: Vec<usize>,
    pub negatives: usize,
    pub cold_threshold: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            interactions: None,
            catalog: None,
            min_count: 5,
            max_seq_len: MAX_SEQUENCE_LEN,
            model: ModelConfig::default(),
            corpus: CorpusOptions::default(),
            pretrain: PretrainConfig::default(),
            tune: TuneConfig::default(),
            ks: DEFAULT_KS.to_vec(),
            negatives: DEFAULT_NEGATIVES,
            cold_threshold: DEFAULT_COLD_THRESHOLD,
            seed: 42,
        }
    }
}

fn parse_num<N: std::str::FromStr>(v: &str) -> std::result::Result<N, String>
where
    N::Err: std::fmt::Display,
{
    v.parse::<N>().map_err(|e| format!("bad value `{v}`: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "data.interactions" => self.interactions = Some(PathBuf::from(v)),
            "data.catalog" => self.catalog = Some(PathBuf::from(v)),
            "data.min_count" => self.min_count = parse_num(v)?,
            "data.max_len" => self.max_seq_len = parse_num(v)?,
            "model.d1" => self.model.sbr.dim = parse_num(v)?,
            "model.d2" => self.model.llm.dim = parse_num(v)?,
            "model.layers" => self.model.sbr.layers = parse_num(v)?,
            "model.adjacency" => {
                self.model.sbr.adjacency = match v {
                    "weighted" => Adjacency::Weighted,
                    "binary" => Adjacency::Binary,
                    _ => return Err(format!("expected weighted or binary, got `{v}`")),
                }
            }
            "model.blocks" => self.model.llm.blocks = parse_num(v)?,
            "model.heads" => self.model.llm.heads = parse_num(v)?,
            "model.max_len" => self.model.llm.max_len = parse_num(v)?,
            "model.lora_rank" => self.model.llm.lora_rank = parse_num(v)?,
            "model.lora_alpha" => self.model.llm.lora_alpha = parse_num(v)?,
            "prompt.graph_free" => {
                let on = parse_bool(v)?;
                self.model.graph_free = on;
                self.corpus.graph_free = on;
                self.model.sbr.backend = if on { Backend::Recurrent } else { Backend::Graph };
            }
            "prompt.candidates" => self.corpus.num_candidates = parse_num(v)?,
            "pretrain.batch" => self.pretrain.batch = parse_num(v)?,
            "pretrain.dropout" => self.pretrain.dropout = parse_num(v)?,
            "pretrain.lr" => self.pretrain.lr = parse_num(v)?,
            "pretrain.epochs" => self.pretrain.epochs = parse_num(v)?,
            "pretrain.patience" => self.pretrain.patience = parse_num(v)?,
            "tune.strategy" => self.tune.strategy = v.parse::<Strategy>().map_err(|e| e.to_string())?,
            "tune.batch" => self.tune.batch = parse_num(v)?,
            "tune.lr" => self.tune.lr = parse_num(v)?,
            "tune.weight_decay" => self.tune.weight_decay = parse_num(v)?,
            "tune.aux_epochs" => self.tune.aux_epochs = parse_num(v)?,
            "tune.major_epochs" => self.tune.major_epochs = parse_num(v)?,
            "eval.ks" => {
                self.ks = v
                    .split(',')
                    .map(|k| parse_num::<usize>(k.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "eval.negatives" => self.negatives = parse_num(v)?,
            "eval.cold_threshold" => self.cold_threshold = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        self.tune.corpus = self.corpus;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.min_count == 0 {
            return fail("data.min_count must be at least 1");
        }
        if self.max_seq_len == 0 {
            return fail("data.max_len must be at least 1");
        }
        if self.model.llm.dim <= self.model.sbr.dim {
            return fail("model.d2 must exceed model.d1");
        }
        if !(0.0..1.0).contains(&self.pretrain.dropout) {
            return fail("pretrain.dropout must lie in [0, 1)");
        }
        if self.pretrain.batch == 0 || self.tune.batch == 0 {
            return fail("batch sizes must be positive");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return fail("eval.ks must list positive cutoffs");
        }
        Ok(())
    }

    pub fn sbr(&self) -> SbrConfig {
        self.model.sbr
    }

    pub fn llm(&self) -> LlmConfig {
        self.model.llm
    }

    /// Every key with its effective value, in parseable form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        if let Some(p) = &self.interactions {
            kv("data.interactions", p.display().to_string());
        }
        if let Some(p) = &self.catalog {
            kv("data.catalog", p.display().to_string());
        }
        kv("data.min_count", self.min_count.to_string());
        kv("data.max_len", self.max_seq_len.to_string());
        kv("model.d1", self.model.sbr.dim.to_string());
        kv("model.d2", self.model.llm.dim.to_string());
        kv("model.layers", self.model.sbr.layers.to_string());
        kv(
            "model.adjacency",
            match self.model.sbr.adjacency {
                Adjacency::Weighted => "weighted",
                Adjacency::Binary => "binary",
            }
            .into(),
        );
        kv("model.blocks", self.model.llm.blocks.to_string());
        kv("model.heads", self.model.llm.heads.to_string());
        kv("model.max_len", self.model.llm.max_len.to_string());
        kv("model.lora_rank", self.model.llm.lora_rank.to_string());
        kv("model.lora_alpha", self.model.llm.lora_alpha.to_string());
        kv("prompt.graph_free", self.model.graph_free.to_string());
        kv("prompt.candidates", self.corpus.num_candidates.to_string());
        kv("pretrain.batch", self.pretrain.batch.to_string());
        kv("pretrain.dropout", self.pretrain.dropout.to_string());
        kv("pretrain.lr", self.pretrain.lr.to_string());
        kv("pretrain.epochs", self.pretrain.epochs.to_string());
        kv("pretrain.patience", self.pretrain.patience.to_string());
        kv("tune.strategy", self.tune.strategy.to_string());
        kv("tune.batch", self.tune.batch.to_string());
        kv("tune.lr", self.tune.lr.to_string());
        kv("tune.weight_decay", self.tune.weight_decay.to_string());
        kv("tune.aux_epochs", self.tune.aux_epochs.to_string());
        kv("tune.major_epochs", self.tune.major_epochs.to_string());
        kv(
            "eval.ks",
            self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("eval.negatives", self.negatives.to_string());
        kv("eval.cold_threshold", self.cold_threshold.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!((c.model.sbr.dim, c.model.llm.dim, c.model.sbr.layers), (64, 128, 1));
        assert_eq!((c.model.llm.blocks, c.model.llm.heads), (2, 4));
        assert_eq!((c.pretrain.batch, c.pretrain.dropout, c.pretrain.lr), (1024, 0.3, 1e-3));
        assert_eq!(c.tune.strategy, Strategy::TwoStage);
        assert_eq!((c.tune.batch, c.tune.lr, c.tune.weight_decay), (16, 1e-4, 1e-2));
        assert_eq!((c.tune.aux_epochs, c.tune.major_epochs), (1, 3));
        assert_eq!((c.ks.clone(), c.negatives, c.cold_threshold), (vec![5, 10, 20], 99, 5));
        assert_eq!(c.max_seq_len, 50);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let err = RunConfig::parse("seed = 1\n\nmodel.depth = 3\n", "run.cfg").unwrap_err();
        assert_eq!(err.to_string(), "run.cfg:3: unknown key `model.depth`");
    }

    #[test]
    fn rendered_config_parses_back() {
        let mut c = RunConfig::default();
        c.set("tune.strategy", "single_stage").unwrap();
        c.set("eval.ks", "1, 5").unwrap();
        c.set("prompt.graph_free", "true").unwrap();
        let back = RunConfig::parse(&c.to_text(), "x").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model.sbr.backend, Backend::Recurrent);
    }
}
