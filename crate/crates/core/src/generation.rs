//! Candidate explanations and their fluency scores.
//!
//! Candidates are realized from the sentence frames over a class's salient
//! features; each mentioned attribute comes from the scene with probability
//! `1 - error_rate` and from the class profile otherwise. Fluency is the
//! sentence log probability under a class-conditioned add-alpha bigram model.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::textproc::{self, AttributePhrase};
use crate::worldsim::{
    mentions_for, realize, salient_subsets, true_attribute, ClassProfile,
    Dataset, Feature, Scene, Split, Taxonomy, FRAMES,
};
use crate::{Error, Result};

pub const START: &str = "<s>";
pub const END: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_CANDIDATES: usize = 100;
pub const DEFAULT_ERROR_RATE: f64 = 0.3;

/// Add-alpha smoothed bigram model over a closed vocabulary.
///
/// Contexts are `<s>`, the vocabulary and `<unk>`; outcomes are the
/// vocabulary, `<unk>` and `</s>`.
#[derive(Clone, Debug)]
pub struct BigramLm {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    alpha: f64,
    /// `log_probs[context][outcome]`
    log_probs: Vec<Vec<f64>>,
}

impl BigramLm {
    pub fn fit<S: AsRef<str>>(corpus: &[Vec<S>], vocab: &[String], alpha: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("language model corpus".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("smoothing alpha {alpha} must be positive")));
        }
        let mut words: Vec<String> = vocab.to_vec();
        words.sort();
        words.dedup();
        let index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let v = words.len();
        // context ids: 0 = <s>, 1..=v words, v+1 = <unk>
        // outcome ids: 0..v words, v = <unk>, v+1 = </s>
        let mut counts = vec![vec![0.0f64; v + 2]; v + 2];
        for sentence in corpus {
            let mut ctx = 0;
            for tok in sentence {
                let out = index.get(tok.as_ref()).copied().unwrap_or(v);
                counts[ctx][out] += 1.0;
                ctx = out + 1;
            }
            counts[ctx][v + 1] += 1.0;
        }
        let log_probs = counts
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + alpha * (v + 2) as f64;
                row.into_iter().map(|c| ((c + alpha) / total).ln()).collect()
            })
            .collect();
        Ok(Self {
            vocab: words,
            index,
            alpha,
            log_probs,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn outcome(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.vocab.len())
    }

    /// `log P(next | prev)`; `None` stands for the start or end marker.
    pub fn log_prob(&self, prev: Option<&str>, next: Option<&str>) -> f64 {
        let ctx = prev.map_or(0, |p| self.outcome(p) + 1);
        let out = next.map_or(self.vocab.len() + 1, |n| self.outcome(n));
        self.log_probs[ctx][out]
    }

    /// Log probability of the tokens without the end transition.
    pub fn prefix_log_prob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut prev = None;
        let mut total = 0.0;
        for t in tokens {
            total += self.log_prob(prev, Some(t.as_ref()));
            prev = Some(t.as_ref());
        }
        total
    }

    /// Sentence log probability including the end transition.
    pub fn fluency<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let last = tokens.last().map(|t| t.as_ref());
        self.prefix_log_prob(tokens) + self.log_prob(last, None)
    }

    /// Number of contexts (rows) in the table.
    pub fn contexts(&self) -> usize {
        self.log_probs.len()
    }

    /// Conditional distribution for one context row, in outcome order.
    pub fn row(&self, context: usize) -> &[f64] {
        &self.log_probs[context]
    }
}

pub fn fit_language_model<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: &[String],
    alpha: f64,
) -> Result<BigramLm> {
    BigramLm::fit(corpus, vocab, alpha)
}

/// One bigram model per class, fit on that class's training-split
/// ground-truth sentences.
#[derive(Clone, Debug)]
pub struct ExplanationLm {
    pub models: Vec<BigramLm>,
}

impl ExplanationLm {
    pub fn fit(dataset: &Dataset, alpha: f64) -> Result<Self> {
        let vocab: Vec<String> = dataset.taxonomy.lexicon.tokens().map(str::to_string).collect();
        let mut corpora: Vec<Vec<&[String]>> = vec![Vec::new(); dataset.profiles.len()];
        for scene in dataset.scenes_in(Split::Train) {
            for r in dataset.ground_truth_of(scene.id) {
                corpora[scene.class].push(&r.tokens);
            }
        }
        let models = corpora
            .iter()
            .enumerate()
            .map(|(c, corpus)| {
                let corpus: Vec<Vec<&str>> = corpus
                    .iter()
                    .map(|t| t.iter().map(String::as_str).collect())
                    .collect();
                BigramLm::fit(&corpus, &vocab, alpha)
                    .map_err(|e| Error::Empty(format!("class {c}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { models })
    }

    pub fn fluency<S: AsRef<str>>(&self, class: usize, tokens: &[S]) -> f64 {
        self.models[class].fluency(tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub s_f: f64,
    #[serde(skip)]
    pub phrases: Vec<AttributePhrase>,
    pub class: usize,
}

impl Candidate {
    pub fn new(tokens: Vec<String>, class: usize, lm: &ExplanationLm, taxonomy: &Taxonomy) -> Self {
        let s_f = lm.fluency(class, &tokens);
        let phrases = textproc::chunk_tokens(&tokens, &taxonomy.lexicon);
        Self {
            tokens,
            s_f,
            phrases,
            class,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Samples `n` candidates for `scene` conditioned on `profile`'s class.
pub fn sample_candidates(
    scene: &Scene,
    profile: &ClassProfile,
    taxonomy: &Taxonomy,
    lm: &ExplanationLm,
    n: usize,
    error_rate: f64,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if n == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::Config(format!("error rate {error_rate} outside [0, 1]")));
    }
    let subsets = salient_subsets(profile.salient.len());
    if subsets.is_empty() {
        return Err(Error::Config("class has fewer than two salient features".into()));
    }
    let mut rng = rng::stream2(seed, domain::CANDIDATES, scene.id as u64, profile.id as u64);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let subset = &subsets[rng.random_range(0..subsets.len())];
        let frame = &FRAMES[profile.pick_frame(subset.len(), &mut rng)];
        let features: Vec<Feature> = subset.iter().map(|&i| profile.salient[i]).collect();
        let from_prior: Vec<bool> = features
            .iter()
            .map(|_| rng.random::<f64>() < error_rate)
            .collect();
        let mut k = 0;
        let mentions = mentions_for(&features, |f| {
            let prior = from_prior[k];
            k += 1;
            if prior {
                profile.attribute(f).to_string()
            } else {
                true_attribute(scene, taxonomy, f)
            }
        });
        let tokens = realize(frame, &mentions, taxonomy);
        out.push(Candidate::new(tokens, profile.id, lm, taxonomy));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateDump {
    pub scene_id: usize,
    pub class: usize,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub tokens: Vec<String>,
    pub s_f: f64,
}

impl CandidateDump {
    pub fn new(scene: &Scene, class: usize, candidates: &[Candidate]) -> Self {
        Self {
            scene_id: scene.id,
            class,
            candidates: candidates
                .iter()
                .map(|c| CandidateRecord {
                    tokens: c.tokens.clone(),
                    s_f: c.s_f,
                })
                .collect(),
        }
    }
}
