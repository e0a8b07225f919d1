//! Target distributions and the cross-entropy objective shared by the
//! recommender head and the language-model head.

use serde::{Deserialize, Serialize};
use sgrec_tensor::{Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Probability floor applied before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Sparse distribution over item indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    entries: Vec<(usize, f64)>,
}

impl Target {
    pub fn one_hot(item: usize) -> Self {
        Self {
            entries: vec![(item, 1.0)],
        }
    }

    /// Equal mass on each distinct item.
    pub fn uniform(items: &[usize]) -> Self {
        let mut distinct: Vec<usize> = Vec::new();
        for &i in items {
            if !distinct.contains(&i) {
                distinct.push(i);
            }
        }
        let w = 1.0 / distinct.len() as f64;
        Self {
            entries: distinct.into_iter().map(|i| (i, w)).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    pub fn dense(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for &(i, w) in &self.entries {
            out[i] += w;
        }
        out
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if let Some(&(i, _)) = self.entries.iter().find(|&&(i, _)| i >= m) {
            return Err(Error::invalid(format!("target item {i} outside [0, {m})")));
        }
        let total: f64 = self.entries.iter().map(|&(_, w)| w).sum();
        if self.entries.iter().any(|&(_, w)| w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("target mass {total} is not a distribution")));
        }
        Ok(())
    }
}

/// `-Σ y_i log(max(softmax(logits)_i, floor))` for a `1 × m` logit row.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, target: &Target) -> Result<Var> {
    let m = tape.value(logits).numel();
    let probs = tape.softmax(logits)?;
    let logp = tape.log(probs, PROB_FLOOR)?;
    let y = Tensor::from_vec(
        tape.shape(logits).to_vec(),
        target.dense(m).into_iter().map(T::of).collect(),
    );
    let y = tape.constant(y);
    let picked = tape.mul(logp, y)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, -1.0)?)
}

/// Softmax of a plain logit vector, max-subtracted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}
