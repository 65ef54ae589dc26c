//! Foil tasks: sentence classification, foil-word detection and foil-word
//! correction, for the binary-trained critic and for the grounding-average
//! baseline.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{
    dataset_grounder, ground_tokens, probability, steps_for, train, CriticModel, EpochLog, Example, Hyper,
    TrainReport, Vocab,
};
use crate::grounding::Grounder;
use crate::worldsim::{replacements, Dataset, FoilMark, Scene, Split, Taxonomy};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoilExample {
    pub scene_id: usize,
    pub split: Split,
    pub tokens: Vec<String>,
    pub relevant: bool,
    /// Gold foil position and correction, for foil examples.
    pub foil: Option<FoilMark>,
}

/// One relevant and one foil example per stored foil sentence, the relevant
/// one being the foil's source sentence.
pub fn foil_examples(dataset: &Dataset) -> Vec<FoilExample> {
    let mut out = Vec::new();
    for scene in &dataset.scenes {
        for rec in dataset.foils_of(scene.id) {
            let sentence = rec.sentence();
            out.push(FoilExample {
                scene_id: scene.id,
                split: scene.split,
                tokens: sentence.corrected().tokens,
                relevant: true,
                foil: None,
            });
            out.push(FoilExample {
                scene_id: scene.id,
                split: scene.split,
                tokens: sentence.tokens,
                relevant: false,
                foil: rec.foil.clone(),
            });
        }
    }
    out
}

/// Scores a token sequence on a scene; `None` when nothing chunks.
pub trait SentenceScorer: Sync {
    fn score(&self, tokens: &[String], scene: &Scene) -> Result<Option<f64>>;
}

pub struct CriticScorer<'a, G> {
    pub taxonomy: &'a Taxonomy,
    pub grounder: &'a G,
    pub model: &'a CriticModel,
}

impl<G: Grounder + Sync> SentenceScorer for CriticScorer<'_, G> {
    fn score(&self, tokens: &[String], scene: &Scene) -> Result<Option<f64>> {
        let grounded = ground_tokens(tokens, scene, self.taxonomy, self.grounder)?;
        if grounded.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.model.score(&steps_for(&grounded, &self.model.vocab))?))
    }
}

/// Mean raw grounding score over the sentence's phrases.
pub struct GroundingMeanScorer<'a, G> {
    pub taxonomy: &'a Taxonomy,
    pub grounder: &'a G,
}

impl<G: Grounder + Sync> SentenceScorer for GroundingMeanScorer<'_, G> {
    fn score(&self, tokens: &[String], scene: &Scene) -> Result<Option<f64>> {
        let grounded = ground_tokens(tokens, scene, self.taxonomy, self.grounder)?;
        if grounded.is_empty() {
            return Ok(None);
        }
        Ok(Some(grounded.iter().map(|g| g.score).sum::<f64>() / grounded.len() as f64))
    }
}

/// Builds labeled critic examples, skipping sentences without phrases.
pub fn labeled_examples(dataset: &Dataset, examples: &[FoilExample], vocab: &Vocab) -> Result<Vec<(Split, Example)>> {
    let grounder = dataset_grounder(dataset);
    let out: Vec<Option<(Split, Example)>> = examples
        .par_iter()
        .map(|e| {
            let scene = dataset
                .scene(e.scene_id)
                .ok_or_else(|| Error::Corrupt {
                    what: "foil example",
                    message: format!("unknown scene {}", e.scene_id),
                })?;
            let grounded = ground_tokens(&e.tokens, scene, &dataset.taxonomy, &grounder)?;
            Ok((!grounded.is_empty()).then(|| {
                (
                    e.split,
                    Example::Labeled {
                        steps: steps_for(&grounded, vocab),
                        label: e.relevant,
                    },
                )
            }))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Trains the critic with the binary loss on the train split, validating on val.
pub fn train_foil_classifier(
    dataset: &Dataset,
    examples: &[FoilExample],
    hyper: Hyper,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(CriticModel, TrainReport)> {
    let vocab = crate::critic::vocab_for(&dataset.taxonomy);
    let labeled = labeled_examples(dataset, examples, &vocab)?;
    let pick = |split: Split| -> Vec<Example> {
        labeled
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, e)| e.clone())
            .collect()
    };
    train(
        hyper,
        vocab,
        dataset.taxonomy.feature_dim() + 4,
        &pick(Split::Train),
        &pick(Split::Val),
        seed,
        on_epoch,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub probability: Option<f64>,
    pub relevant: bool,
    /// No phrase could be chunked; labeled foil by rule.
    pub fallback: bool,
}

/// Relevant iff σ(S_r) > 0.5.
pub fn classify(tokens: &[String], scene: &Scene, scorer: &impl SentenceScorer) -> Result<Classification> {
    Ok(match scorer.score(tokens, scene)? {
        Some(s) => {
            let p = probability(s);
            Classification {
                probability: Some(p),
                relevant: p > 0.5,
                fallback: false,
            }
        }
        None => Classification {
            probability: None,
            relevant: false,
            fallback: true,
        },
    })
}

fn or_neg_inf(s: Option<f64>) -> f64 {
    s.unwrap_or(f64::NEG_INFINITY)
}

/// Index of the content word whose removal raises the score most; smallest
/// index on ties. A removal leaving no phrase scores -inf.
pub fn detect_foil_word(
    tokens: &[String],
    scene: &Scene,
    taxonomy: &Taxonomy,
    scorer: &impl SentenceScorer,
) -> Result<usize> {
    if tokens.len() < 2 {
        return Err(Error::Config("detection needs at least two tokens".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for j in (0..tokens.len()).filter(|&j| taxonomy.category_of(&tokens[j]).is_some()) {
        let mut held_out = tokens.to_vec();
        held_out.remove(j);
        let s = or_neg_inf(scorer.score(&held_out, scene)?);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::Empty(format!("\"{}\" has no content word", tokens.join(" "))))
}

/// Substitution from `targets` that maximizes the score; lexicographically
/// smallest on ties.
pub fn correct_foil_word(
    tokens: &[String],
    index: usize,
    targets: &[String],
    scene: &Scene,
    scorer: &impl SentenceScorer,
) -> Result<String> {
    if index >= tokens.len() {
        return Err(Error::Config(format!("foil index {index} out of range")));
    }
    let mut sorted: Vec<&String> = targets.iter().collect();
    sorted.sort();
    sorted.dedup();
    let mut best: Option<(&String, f64)> = None;
    for t in sorted {
        let mut sub = tokens.to_vec();
        sub[index] = t.clone();
        let s = or_neg_inf(scorer.score(&sub, scene)?);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t.clone())
        .ok_or_else(|| Error::Empty("empty target vocabulary".into()))
}

/// All same-category tokens of the word at `index`, excluding it.
pub fn target_vocabulary(tokens: &[String], index: usize, taxonomy: &Taxonomy) -> Vec<String> {
    match tokens.get(index).and_then(|t| taxonomy.category_of(t)) {
        Some(cat) => replacements(taxonomy, cat, &tokens[index]),
        None => Vec::new(),
    }
}

/// Relevant iff the mean grounding score exceeds `tau`; no phrase means foil.
pub fn baseline_classify(mean: Option<f64>, tau: f64) -> bool {
    mean.is_some_and(|m| m > tau)
}

/// Threshold maximizing accuracy over midpoints of the sorted distinct
/// observed means; the smallest such midpoint on ties. With fewer than two
/// distinct means, a value just below the minimum.
pub fn tune_tau(observed: &[(Option<f64>, bool)]) -> Result<f64> {
    let mut means: Vec<f64> = observed.iter().filter_map(|(m, _)| *m).collect();
    if means.is_empty() {
        return Err(Error::Empty("no grounded training sentence".into()));
    }
    means.sort_by(f64::total_cmp);
    means.dedup();
    if means.len() < 2 {
        return Ok(means[0] - 1.0);
    }
    let accuracy = |tau: f64| {
        observed
            .iter()
            .filter(|(m, label)| baseline_classify(*m, tau) == *label)
            .count()
    };
    let mut best = (0, f64::NAN);
    for w in means.windows(2) {
        let tau = (w[0] + w[1]) / 2.0;
        let hits = accuracy(tau);
        if best.1.is_nan() || hits > best.0 {
            best = (hits, tau);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub classification: f64,
    pub detection: f64,
    pub correction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoilReport {
    pub critic: TaskScores,
    pub baseline: TaskScores,
    pub tau: f64,
    pub classification_examples: usize,
    pub foil_examples: usize,
    /// Examples classified by the zero-phrase rule (critic side).
    pub fallbacks: usize,
}

impl fmt::Display for FoilReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>14} {:>15} {:>16}", "", "Classification", "Word Detection", "Word Correction")?;
        for (name, s) in [("Grounding mean", self.baseline), ("Phrase critic", self.critic)] {
            writeln!(
                f,
                "{:<16} {:>14.2} {:>15.2} {:>16.2}",
                name,
                100.0 * s.classification,
                100.0 * s.detection,
                100.0 * s.correction
            )?;
        }
        Ok(())
    }
}

struct Outcome {
    classified: bool,
    fallback: bool,
    detected: Option<bool>,
    corrected: Option<bool>,
}

fn run_tasks(
    example: &FoilExample,
    scene: &Scene,
    taxonomy: &Taxonomy,
    scorer: &impl SentenceScorer,
    classify_with: impl Fn(&[String], &Scene) -> Result<Classification>,
) -> Result<Outcome> {
    let c = classify_with(&example.tokens, scene)?;
    let (detected, corrected) = match &example.foil {
        Some(mark) => {
            let d = detect_foil_word(&example.tokens, scene, taxonomy, scorer)?;
            let targets = target_vocabulary(&example.tokens, mark.index, taxonomy);
            let fixed = correct_foil_word(&example.tokens, mark.index, &targets, scene, scorer)?;
            (Some(d == mark.index), Some(fixed == mark.original))
        }
        None => (None, None),
    };
    Ok(Outcome {
        classified: c.relevant == example.relevant,
        fallback: c.fallback,
        detected,
        corrected,
    })
}

fn summarize(outcomes: &[Outcome]) -> (TaskScores, usize, usize) {
    let frac = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let cls = outcomes.iter().filter(|o| o.classified).count();
    let det: Vec<bool> = outcomes.iter().filter_map(|o| o.detected).collect();
    let cor: Vec<bool> = outcomes.iter().filter_map(|o| o.corrected).collect();
    (
        TaskScores {
            classification: frac(cls, outcomes.len()),
            detection: frac(det.iter().filter(|h| **h).count(), det.len()),
            correction: frac(cor.iter().filter(|h| **h).count(), cor.len()),
        },
        det.len(),
        outcomes.iter().filter(|o| o.fallback).count(),
    )
}

/// Runs all three tasks on `split` for the critic and for the baseline, whose
/// threshold is tuned on the train split.
pub fn evaluate_foil(dataset: &Dataset, examples: &[FoilExample], model: &CriticModel, split: Split) -> Result<FoilReport> {
    let grounder = dataset_grounder(dataset);
    let tax = &dataset.taxonomy;
    let critic = CriticScorer {
        taxonomy: tax,
        grounder: &grounder,
        model,
    };
    let baseline = GroundingMeanScorer {
        taxonomy: tax,
        grounder: &grounder,
    };
    let scene_of = |e: &FoilExample| {
        dataset.scene(e.scene_id).ok_or_else(|| Error::Corrupt {
            what: "foil example",
            message: format!("unknown scene {}", e.scene_id),
        })
    };

    let observed = examples
        .par_iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| Ok((baseline.score(&e.tokens, scene_of(e)?)?, e.relevant)))
        .collect::<Result<Vec<_>>>()?;
    let tau = tune_tau(&observed)?;

    let eval: Vec<&FoilExample> = examples.iter().filter(|e| e.split == split).collect();
    if eval.is_empty() {
        return Err(Error::Empty(format!("no foil examples in the {split:?} split")));
    }
    let critic_out = eval
        .par_iter()
        .map(|e| run_tasks(e, scene_of(e)?, tax, &critic, |t, s| classify(t, s, &critic)))
        .collect::<Result<Vec<_>>>()?;
    let baseline_out = eval
        .par_iter()
        .map(|e| {
            run_tasks(e, scene_of(e)?, tax, &baseline, |t, s| {
                let mean = baseline.score(t, s)?;
                Ok(Classification {
                    probability: None,
                    relevant: baseline_classify(mean, tau),
                    fallback: mean.is_none(),
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (critic_scores, foils, fallbacks) = summarize(&critic_out);
    let (baseline_scores, _, _) = summarize(&baseline_out);
    Ok(FoilReport {
        critic: critic_scores,
        baseline: baseline_scores,
        tau,
        classification_examples: eval.len(),
        foil_examples: foils,
        fallbacks,
    })
}
