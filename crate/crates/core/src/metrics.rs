//! Grounding and explanation metrics.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{dataset_grounder, CriticModel};
use crate::explain::{score_candidates, select_from, Explanation, SelectionConfig, Selector};
use crate::generation::{sample_candidates, ExplanationLm};
use crate::grounding::GroundedPhrase;
use crate::textproc::AttributePhrase;
use crate::worldsim::{Dataset, Scene, Split, Taxonomy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartTally {
    pub hits: usize,
    pub count: usize,
    pub distance_sum: f64,
}

/// Running keypoint statistics per head-noun part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointTally {
    pub parts: BTreeMap<String, PartTally>,
    /// Phrases whose head noun has no keypoint in the scene.
    pub excluded: usize,
}

impl KeypointTally {
    pub fn add(&mut self, grounded: &[GroundedPhrase], scene: &Scene, taxonomy: &Taxonomy) {
        for g in grounded {
            let part = taxonomy.noun_part(&g.phrase.noun).map(|p| &taxonomy.parts[p]);
            let Some((part, kp)) = part.and_then(|p| scene.keypoint_of_part(p).map(|k| (p, k))) else {
                self.excluded += 1;
                continue;
            };
            let t = self.parts.entry(part.clone()).or_default();
            t.count += 1;
            t.hits += g.bbox.contains(kp) as usize;
            let [cx, cy] = g.bbox.center();
            let (dx, dy) = (kp[0] - cx, kp[1] - cy);
            t.distance_sum += (dx * dx + dy * dy).sqrt();
        }
    }

    pub fn summary(&self) -> BTreeMap<String, PartKeypoints> {
        self.parts
            .iter()
            .filter(|(_, t)| t.count > 0)
            .map(|(k, t)| {
                (
                    k.clone(),
                    PartKeypoints {
                        accuracy: 100.0 * t.hits as f64 / t.count as f64,
                        distance: t.distance_sum / t.count as f64,
                        count: t.count,
                    },
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartKeypoints {
    /// Percent of groundings whose box contains the part keypoint.
    pub accuracy: f64,
    /// Mean keypoint to box-center distance, canvas units.
    pub distance: f64,
    pub count: usize,
}

/// Per-part percentage of groundings whose box (closed) contains the keypoint
/// of the phrase's head-noun part, and the number of excluded phrases.
pub fn keypoint_accuracy(
    grounded: &[GroundedPhrase],
    scene: &Scene,
    taxonomy: &Taxonomy,
) -> (BTreeMap<String, f64>, usize) {
    let mut t = KeypointTally::default();
    t.add(grounded, scene, taxonomy);
    let acc = t.summary().into_iter().map(|(k, v)| (k, v.accuracy)).collect();
    (acc, t.excluded)
}

/// Per-part mean Euclidean distance from keypoint to box center.
pub fn keypoint_distance(
    grounded: &[GroundedPhrase],
    scene: &Scene,
    taxonomy: &Taxonomy,
) -> (BTreeMap<String, f64>, usize) {
    let mut t = KeypointTally::default();
    t.add(grounded, scene, taxonomy);
    let d = t.summary().into_iter().map(|(k, v)| (k, v.distance)).collect();
    (d, t.excluded)
}

/// Oracle truth of a phrase on a scene.
pub fn phrase_correct(phrase: &AttributePhrase, scene: &Scene, taxonomy: &Taxonomy) -> bool {
    scene.supports(taxonomy, &phrase.adjectives, &phrase.noun)
}

/// CNP and CS in percent. CNP averages each sentence's fraction of correct
/// phrases; a sentence without phrases counts as fully wrong.
pub fn cnp_cs(explanations: &[(Vec<AttributePhrase>, &Scene)], taxonomy: &Taxonomy) -> (f64, f64) {
    if explanations.is_empty() {
        return (0.0, 0.0);
    }
    let mut cnp = 0.0;
    let mut cs = 0usize;
    for (phrases, scene) in explanations {
        if phrases.is_empty() {
            continue;
        }
        let ok = phrases.iter().filter(|p| phrase_correct(p, scene, taxonomy)).count();
        cnp += ok as f64 / phrases.len() as f64;
        cs += (ok == phrases.len()) as usize;
    }
    let n = explanations.len() as f64;
    (100.0 * cnp / n, 100.0 * cs as f64 / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Selector,
    pub cnp: f64,
    pub cs: f64,
    /// Selections that fell back to the most fluent candidate.
    pub fallbacks: usize,
    pub keypoints: BTreeMap<String, PartKeypoints>,
    pub excluded_phrases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub scenes: usize,
    pub selection: SelectionConfig,
    pub methods: Vec<MethodMetrics>,
}

impl MetricReport {
    pub fn method(&self, selector: Selector) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == selector)
    }

    /// CNP/CS rows, one per method.
    pub fn explanation_table(&self) -> String {
        let mut out = format!("{:<16} {:>8} {:>8}\n", "", "CNP", "CS");
        for m in &self.methods {
            out += &format!("{:<16} {:>8.2} {:>8.2}\n", method_label(m.method), m.cnp, m.cs);
        }
        out
    }

    /// Keypoint accuracy and distance per part for one method.
    pub fn keypoint_table(&self, selector: Selector) -> String {
        let Some(m) = self.method(selector) else {
            return String::new();
        };
        let mut out = format!("{:<10} {:>10} {:>10} {:>7}\n", "part", "% Accuracy", "Distance", "n");
        for (part, k) in &m.keypoints {
            out += &format!("{:<10} {:>10.2} {:>10.4} {:>7}\n", part, k.accuracy, k.distance, k.count);
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n{}", self.explanation_table(), self.keypoint_table(Selector::PhraseCritic))
    }
}

fn method_label(s: Selector) -> &'static str {
    match s {
        Selector::Fluency => "Fluency only",
        Selector::GroundingMean => "Grounding mean",
        Selector::PhraseCritic => "Phrase critic",
    }
}

pub const METHODS: [Selector; 3] = [Selector::Fluency, Selector::GroundingMean, Selector::PhraseCritic];

/// Selections of all three methods for one scene, from one shared candidate pool.
pub fn select_all(
    scene: &Scene,
    dataset: &Dataset,
    model: &CriticModel,
    lm: &ExplanationLm,
    config: &SelectionConfig,
) -> Result<[Explanation; 3]> {
    let cands = sample_candidates(
        scene,
        dataset.profile_of(scene),
        &dataset.taxonomy,
        lm,
        config.candidates,
        config.error_rate,
        config.seed,
    )?;
    let scored = score_candidates(&cands, scene, model, &dataset_grounder(dataset))?;
    let pick = |s| select_from(scene, &scored, s, config.threshold);
    Ok([pick(METHODS[0])?, pick(METHODS[1])?, pick(METHODS[2])?])
}

/// Runs the three selectors on identical pools for every scene of `split`.
pub fn compare_methods(
    dataset: &Dataset,
    model: &CriticModel,
    lm: &ExplanationLm,
    config: &SelectionConfig,
    split: Split,
) -> Result<MetricReport> {
    let scenes: Vec<&Scene> = dataset.scenes_in(split).collect();
    if scenes.is_empty() {
        return Err(Error::Empty(format!("no scenes in the {split:?} split")));
    }
    let picks = scenes
        .par_iter()
        .map(|s| select_all(s, dataset, model, lm, config))
        .collect::<Result<Vec<_>>>()?;
    let tax = &dataset.taxonomy;
    let methods = METHODS
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let chosen: Vec<(Vec<AttributePhrase>, &Scene)> = picks
                .iter()
                .zip(&scenes)
                .map(|(p, s)| (p[m].phrases().into_iter().cloned().collect(), *s))
                .collect();
            let (cnp, cs) = cnp_cs(&chosen, tax);
            let mut tally = KeypointTally::default();
            for (p, s) in picks.iter().zip(&scenes) {
                tally.add(&p[m].grounded, s, tax);
            }
            MethodMetrics {
                method,
                cnp,
                cs,
                fallbacks: picks.iter().filter(|p| p[m].fallback).count(),
                keypoints: tally.summary(),
                excluded_phrases: tally.excluded,
            }
        })
        .collect();
    Ok(MetricReport {
        split,
        scenes: scenes.len(),
        selection: *config,
        methods,
    })
}
