//! Standalone training of the session recommender on next-item prediction.

use rand::seq::SliceRandom;
use sgrec_tensor::{rng, AdamW, AdamWConfig};

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, mrr, SbrScorer, DEFAULT_NEGATIVES};
use crate::nn::{cross_entropy, Target};
use crate::params::{batch_gradients, optimizer_step, Group, GroupSet, ParameterStore};
use crate::sbr::{Sbr, SbrConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub batch: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub negatives: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch: 1024,
            dropout: 0.3,
            lr: 1e-3,
            epochs: 30,
            patience: 5,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_mrr10: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub sbr: Sbr,
    /// Parameters from the epoch with the best validation MRR@10.
    pub store: ParameterStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Step and loss at which training produced a non-finite loss; `store`
    /// then holds the last good parameters.
    pub diverged: Option<(usize, f64)>,
}

impl Pretrained {
    fn diverge(mut self, current: ParameterStore<f32>, step: usize, loss: f64) -> Self {
        if self.best_epoch.is_none() {
            self.store = current;
        }
        self.diverged = Some((step, loss));
        self
    }

    pub fn check(&self) -> Result<()> {
        match self.diverged {
            Some((step, loss)) => Err(Error::Diverged { step, loss }),
            None => Ok(()),
        }
    }
}

pub fn pretrain(split: &SplitDataset, sbr_config: SbrConfig, config: PretrainConfig, seed: u64) -> Result<Pretrained> {
    if config.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut store = ParameterStore::<f32>::new();
    let sbr = Sbr::new(&mut store, split.num_items, sbr_config, &mut rng::stream(seed, 1))?;
    let mut result = Pretrained {
        sbr: sbr.clone(),
        store: store.clone(),
        history: Vec::new(),
        best_epoch: None,
        diverged: None,
    };
    if config.epochs == 0 || split.train.is_empty() {
        return Ok(result);
    }

    let trainable: GroupSet = [Group::Sbr].into();
    let mut opt = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let shuffle_seed = rng::derive_seed(seed, "pretrain.shuffle");
    let dropout_seed = rng::derive_seed(seed, "pretrain.dropout");
    let eval_seed = rng::derive_seed(seed, "pretrain.valid");
    let n = split.train.len();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            let base = (epoch * n + b * config.batch) as u64;
            let outcome = batch_gradients(&store, &trainable, chunk, |ctx, &i, j| {
                let ex = &split.train[i];
                let mut r = rng::stream(dropout_seed, base + j as u64);
                let z = sbr.session_embedding(ctx, &ex.prefix, Some((config.dropout, &mut r)))?;
                let logits = sbr.score(ctx, z)?;
                cross_entropy(&mut ctx.tape, logits, &Target::one_hot(ex.target))
            });
            let (loss, grads) = match outcome {
                Ok((loss, g)) if loss.is_finite() => (loss, g),
                Ok((loss, _)) => return Ok(result.diverge(store, step, loss)),
                Err(e) if e.is_non_finite() => return Ok(result.diverge(store, step, f64::NAN)),
                Err(e) => return Err(e),
            };
            epoch_loss += loss;
            optimizer_step(&mut store, &mut opt, &trainable, grads, chunk.len(), config.lr)?;
            step += 1;
        }

        let scorer = SbrScorer { sbr: &sbr, store: &store };
        let outcomes = evaluate(&scorer, &split.valid, config.negatives, eval_seed)?;
        let valid = mrr(&outcomes, 10)?;
        result.history.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / n as f64,
            valid_mrr10: valid,
        });
        if valid > best {
            best = valid;
            stale = 0;
            result.store = store.clone();
            result.best_epoch = Some(epoch);
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(result)
}
