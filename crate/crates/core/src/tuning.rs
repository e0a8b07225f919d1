//! Staged instruction tuning with per-stage parameter freezing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use sgrec_tensor::{cosine_lr, rng, AdamW, AdamWConfig, Real};

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::model::Llmgr;
use crate::params::{batch_gradients, optimizer_step, Group, GroupSet, ParameterStore};
use crate::prompt::{build_tuning_corpus, CorpusOptions, PromptInstance, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Auxiliary stage, then major stage, each with its own trainable set.
    TwoStage,
    /// One stage over every prompt kind, everything but the LLM trainable.
    SingleStage,
    /// Both stages, nothing but the LLM frozen.
    TwoStageNoFreeze,
    /// Major stage alone.
    MajorOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::TwoStage,
        Strategy::SingleStage,
        Strategy::TwoStageNoFreeze,
        Strategy::MajorOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TwoStage => "two_stage",
            Strategy::SingleStage => "single_stage",
            Strategy::TwoStageNoFreeze => "two_stage_no_freeze",
            Strategy::MajorOnly => "major_only",
        }
    }

    pub fn phases(self) -> &'static [Phase] {
        match self {
            Strategy::TwoStage | Strategy::TwoStageNoFreeze => &[Phase::Aux, Phase::Major],
            Strategy::SingleStage => &[Phase::Joint],
            Strategy::MajorOnly => &[Phase::Major],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

/// One tuning pass over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Aux,
    Major,
    /// Auxiliary and behavior prompts mixed.
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Aux => "aux",
            Phase::Major => "major",
            Phase::Joint => "joint",
        })
    }
}

/// Groups updated during `phase` of `strategy`. The LLM is never included.
pub fn trainable_set(strategy: Strategy, phase: Phase) -> Result<GroupSet> {
    use Group::*;
    let set: &[Group] = match (strategy, phase) {
        (Strategy::TwoStage, Phase::Aux) => &[Lora, In, Out],
        (Strategy::TwoStage | Strategy::MajorOnly, Phase::Major) => &[Sbr, Out],
        (Strategy::SingleStage, Phase::Joint) | (Strategy::TwoStageNoFreeze, Phase::Aux | Phase::Major) => {
            &[Lora, In, Out, Sbr]
        }
        _ => return Err(Error::invalid(format!("strategy {strategy} has no {phase} stage"))),
    };
    Ok(set.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub strategy: Strategy,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub aux_epochs: usize,
    pub major_epochs: usize,
    pub corpus: CorpusOptions,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TwoStage,
            batch: 16,
            lr: 1e-4,
            weight_decay: 1e-2,
            aux_epochs: 1,
            major_epochs: 3,
            corpus: CorpusOptions::default(),
        }
    }
}

impl TuneConfig {
    /// The joint stage runs for as many epochs as the major stage.
    pub fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Aux => self.aux_epochs,
            Phase::Major | Phase::Joint => self.major_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub phase: Phase,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:.6} {:.3e}", self.phase, self.step, self.loss, self.lr)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneLog {
    pub steps: Vec<StepLog>,
    /// `(phase, epoch, mean loss)`.
    pub epochs: Vec<(Phase, usize, f64)>,
    /// Set when a step produced a non-finite loss; the store then holds the
    /// parameters from before that step.
    pub diverged: Option<(Phase, usize, f64)>,
}

impl TuneLog {
    pub fn check(&self) -> Result<()> {
        match self.diverged {
            Some((_, step, loss)) => Err(Error::Diverged { step, loss }),
            None => Ok(()),
        }
    }
}

/// SHA-256 of every tensor's little-endian bytes, keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSnapshot {
    digests: BTreeMap<String, (Group, String)>,
}

impl GroupSnapshot {
    pub fn take<T: Real>(store: &ParameterStore<T>) -> Self {
        let digests = store
            .ids()
            .map(|id| {
                let digest = hex::encode(Sha256::digest(store.get(id).to_le_bytes()));
                (store.name(id).to_string(), (store.group(id), digest))
            })
            .collect();
        Self { digests }
    }

    pub fn tensor(&self, name: &str) -> Option<&str> {
        self.digests.get(name).map(|(_, d)| d.as_str())
    }

    /// Digest over the ordered per-tensor digests of `group`.
    pub fn group(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for (name, (g, d)) in &self.digests {
            if *g == group {
                h.update(name.as_bytes());
                h.update(d.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Tensors of `group` whose digest differs between the snapshots.
    pub fn changed(&self, other: &Self, group: Group) -> Vec<String> {
        self.digests
            .iter()
            .filter(|(name, (g, d))| *g == group && other.digests.get(*name).map(|(_, o)| o) != Some(d))
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// Corpus for `phase`; instance order depends only on `seed`.
pub fn phase_corpus(
    split: &SplitDataset,
    titles: &[String],
    phase: Phase,
    opts: CorpusOptions,
    seed: u64,
) -> Result<Vec<PromptInstance>> {
    match phase {
        Phase::Aux => build_tuning_corpus(split, titles, seed, Stage::Aux, opts),
        Phase::Major => build_tuning_corpus(split, titles, seed, Stage::Major, opts),
        Phase::Joint => {
            let mut all = build_tuning_corpus(split, titles, seed, Stage::Aux, opts)?;
            all.extend(build_tuning_corpus(split, titles, seed, Stage::Major, opts)?);
            all.shuffle(&mut rng::stream(seed, 2));
            Ok(all)
        }
    }
}

/// Mini-batched AdamW over `trainable_set(strategy, phase)` only. A fresh
/// optimizer is created here, so no moments carry across stages. Each epoch
/// regenerates the corpus from its own seed.
pub fn run_stage<T: Real>(
    model: &Llmgr,
    store: &mut ParameterStore<T>,
    split: &SplitDataset,
    titles: &[String],
    config: &TuneConfig,
    phase: Phase,
    seed: u64,
    log: &mut TuneLog,
) -> Result<()> {
    let trainable = trainable_set(config.strategy, phase)?;
    let epochs = config.epochs(phase);
    if epochs == 0 {
        return Ok(());
    }
    if config.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let phase_seed = rng::derive_seed(seed, &format!("tune.{phase}"));
    let corpus_for = |epoch: usize| phase_corpus(split, titles, phase, config.corpus, rng::derive_seed(phase_seed, &epoch.to_string()));
    let first = corpus_for(0)?;
    if first.is_empty() {
        return Ok(());
    }
    let total_steps = (epochs * first.len().div_ceil(config.batch)) as u64;
    let mut opt = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });

    let mut step = 0usize;
    let mut corpus = first;
    for epoch in 0..epochs {
        if epoch > 0 {
            corpus = corpus_for(epoch)?;
        }
        let mut epoch_loss = 0.0;
        for batch in corpus.chunks(config.batch) {
            let lr = cosine_lr(config.lr, step as u64, total_steps);
            let outcome = batch_gradients(store, &trainable, batch, |ctx, p, _| model.loss(ctx, p));
            let (loss, grads) = match outcome {
                Ok((loss, g)) if loss.is_finite() => (loss, g),
                Ok((loss, _)) => {
                    log.diverged = Some((phase, step, loss));
                    return Ok(());
                }
                Err(e) if e.is_non_finite() => {
                    log.diverged = Some((phase, step, f64::NAN));
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            optimizer_step(store, &mut opt, &trainable, grads, batch.len(), lr)?;
            let mean = loss / batch.len() as f64;
            epoch_loss += loss;
            log.steps.push(StepLog {
                phase,
                step,
                loss: mean,
                lr,
            });
            step += 1;
        }
        log.epochs.push((phase, epoch, epoch_loss / corpus.len() as f64));
    }
    Ok(())
}

/// Every stage of `config.strategy` in order. Stops early, leaving the
/// last good parameters in `store`, if a stage diverges.
pub fn run_pipeline<T: Real>(
    model: &Llmgr,
    store: &mut ParameterStore<T>,
    split: &SplitDataset,
    titles: &[String],
    config: &TuneConfig,
    seed: u64,
) -> Result<TuneLog> {
    let mut log = TuneLog::default();
    for &phase in config.strategy.phases() {
        run_stage(model, store, split, titles, config, phase, seed, &mut log)?;
        if log.diverged.is_some() {
            break;
        }
    }
    Ok(log)
}
