use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{probability, CriticModel, Example, Hyper, StepInput, Vocab};
use crate::rng::{self, domain};
use crate::{Error, Result};

/// Examples per gradient work unit; partial sums are added in unit order.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Rank,
    Binary,
}

impl Objective {
    pub fn of(examples: &[Example]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Empty("training set".into()))?;
        let kind = match first {
            Example::Pair { .. } => Objective::Rank,
            Example::Labeled { .. } => Objective::Binary,
        };
        if examples.iter().any(|e| Objective::of_one(e) != kind) {
            return Err(Error::Config("training set mixes pairs and labeled examples".into()));
        }
        Ok(kind)
    }

    fn of_one(e: &Example) -> Self {
        match e {
            Example::Pair { .. } => Objective::Rank,
            Example::Labeled { .. } => Objective::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Pairwise ranking accuracy or classification accuracy on the
    /// validation set, if one was given.
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: Objective,
    pub seed: u64,
    pub hyper: Hyper,
    pub train_examples: usize,
    pub val_examples: usize,
    pub epochs: Vec<EpochLog>,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Fraction of pairs ranked strictly correctly, or of labeled examples
/// classified correctly at probability > 0.5.
pub fn accuracy(model: &CriticModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|e| {
            Ok(match e {
                Example::Pair { positive, negative } => model.score(positive)? > model.score(negative)?,
                Example::Labeled { steps, label } => (probability(model.score(steps)?) > 0.5) == *label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Pairwise accuracy of ranking by the mean raw grounding score, the
/// critic-free baseline. Labeled examples are ignored.
pub fn mean_score_accuracy(examples: &[Example]) -> Result<f64> {
    let mean = |steps: &[StepInput]| steps.iter().map(|s| s.score).sum::<f64>() / steps.len() as f64;
    let hits: Vec<bool> = examples
        .iter()
        .filter_map(|e| match e {
            Example::Pair { positive, negative } => Some(mean(positive) > mean(negative)),
            Example::Labeled { .. } => None,
        })
        .collect();
    if hits.is_empty() {
        return Err(Error::Empty("no ranking pairs".into()));
    }
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

fn batch_gradient(model: &CriticModel, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; model.params.len()];
            let mut loss = 0.0;
            for ex in chunk {
                loss += model.accumulate(ex, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mini-batch SGD with momentum from a fresh initialization.
pub fn train(
    hyper: Hyper,
    vocab: Vocab,
    feature_dim: usize,
    train_set: &[Example],
    val_set: &[Example],
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(CriticModel, TrainReport)> {
    let model = CriticModel::init(hyper, vocab, feature_dim, seed)?;
    train_from(model, train_set, val_set, seed, on_epoch)
}

/// Continues training `model` with its own hyperparameters.
pub fn train_from(
    mut model: CriticModel,
    train_set: &[Example],
    val_set: &[Example],
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(CriticModel, TrainReport)> {
    let objective = Objective::of(train_set)?;
    if !val_set.is_empty() && Objective::of(val_set)? != objective {
        return Err(Error::Config("validation set objective differs from training set".into()));
    }
    if objective == Objective::Binary {
        let labels: Vec<bool> = train_set
            .iter()
            .filter_map(|e| match e {
                Example::Labeled { label, .. } => Some(*label),
                _ => None,
            })
            .collect();
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            return Err(Error::Config("binary training set needs both labels".into()));
        }
    }
    let hyper = model.hyper;
    let start = Instant::now();
    let mut velocity = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut rng = rng::stream(seed, domain::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(hyper.batch) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch).map_err(|e| Error::Diverged {
                epoch,
                message: e.to_string(),
            })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss {loss}"),
                });
            }
            total += loss * batch.len() as f64;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v + g;
                *p -= hyper.lr * *v;
            }
        }
        let log = EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_accuracy: if val_set.is_empty() {
                None
            } else {
                Some(accuracy(&model, val_set).map_err(|e| Error::Diverged {
                    epoch,
                    message: e.to_string(),
                })?)
            },
        };
        on_epoch(&log);
        epochs.push(log);
    }
    let report = TrainReport {
        objective,
        seed,
        hyper,
        train_examples: train_set.len(),
        val_examples: val_set.len(),
        epochs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
