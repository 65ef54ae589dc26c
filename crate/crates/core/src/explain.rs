//! Fluency-gated explanation selection and counterfactual explanations.
//!
//! A candidate is kept only if its fluency exceeds the threshold `T`; among
//! the kept candidates the critic's relevance score decides. Counterfactuals
//! take the explanation of the nearest scene of the most similar other class
//! and report its phrase that scores lowest on the query scene.

use serde::{Deserialize, Serialize};

use crate::critic::{dataset_grounder, ground_tokens, step_for, steps_for, CriticModel};
use crate::generation::{sample_candidates, Candidate, ExplanationLm};
use crate::grounding::{GroundedPhrase, Grounder};
use crate::textproc::AttributePhrase;
use crate::worldsim::{BBox, ClassProfile, Dataset, Scene, Taxonomy};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = -5.0;

/// A candidate with its groundings and critic score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub index: usize,
    pub tokens: Vec<String>,
    pub s_f: f64,
    pub grounded: Vec<GroundedPhrase>,
    /// `None` when the candidate has no attribute phrase.
    pub s_r: Option<f64>,
}

impl ScoredCandidate {
    pub fn mean_grounding(&self) -> Option<f64> {
        if self.grounded.is_empty() {
            None
        } else {
            Some(self.grounded.iter().map(|g| g.score).sum::<f64>() / self.grounded.len() as f64)
        }
    }

    fn passes(&self, threshold: f64) -> bool {
        self.s_f > threshold
    }
}

/// Grounds every candidate in `scene` and scores it with the critic.
pub fn score_candidates(
    candidates: &[Candidate],
    scene: &Scene,
    model: &CriticModel,
    grounder: &impl Grounder,
) -> Result<Vec<ScoredCandidate>> {
    candidates
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let grounded = grounder.ground_all(&c.phrases, scene)?;
            let s_r = if grounded.is_empty() {
                None
            } else {
                Some(model.score(&steps_for(&grounded, &model.vocab))?)
            };
            Ok(ScoredCandidate {
                index,
                tokens: c.tokens.clone(),
                s_f: c.s_f,
                grounded,
                s_r,
            })
        })
        .collect()
}

/// First index attaining the maximum of `key` over the items where it is defined.
fn argmax<T>(items: &[T], key: impl Fn(&T) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, it) in items.iter().enumerate() {
        if let Some(v) = key(it) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Which selector produced an explanation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    /// Highest fluency.
    Fluency,
    /// Highest mean raw grounding score among candidates passing the gate.
    GroundingMean,
    /// Highest critic score among candidates passing the gate.
    PhraseCritic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub scene_id: usize,
    /// Index of the chosen candidate in the pool.
    pub candidate: usize,
    pub tokens: Vec<String>,
    pub s_f: f64,
    pub s_r: Option<f64>,
    /// `S_r` if the candidate passes the gate, else 0.
    pub gated_score: f64,
    pub grounded: Vec<GroundedPhrase>,
    /// True when the selector had nothing to choose from (every candidate
    /// gated, or none with a phrase) and the most fluent was taken.
    pub fallback: bool,
}

impl Explanation {
    fn from_scored(scene: &Scene, c: &ScoredCandidate, threshold: f64, fallback: bool) -> Self {
        Self {
            scene_id: scene.id,
            candidate: c.index,
            tokens: c.tokens.clone(),
            s_f: c.s_f,
            s_r: c.s_r,
            gated_score: if c.passes(threshold) { c.s_r.unwrap_or(0.0) } else { 0.0 },
            grounded: c.grounded.clone(),
            fallback,
        }
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn phrases(&self) -> Vec<&AttributePhrase> {
        self.grounded.iter().map(|g| &g.phrase).collect()
    }
}

/// Applies a selector to an already scored pool.
pub fn select_from(scene: &Scene, scored: &[ScoredCandidate], selector: Selector, threshold: f64) -> Result<Explanation> {
    if scored.is_empty() {
        return Err(Error::Empty("no candidate explanations".into()));
    }
    let gated = |c: &ScoredCandidate, v: Option<f64>| if c.passes(threshold) { v } else { None };
    let pick = match selector {
        Selector::Fluency => argmax(scored, |c| Some(c.s_f)),
        Selector::GroundingMean => argmax(scored, |c| gated(c, c.mean_grounding())),
        Selector::PhraseCritic => argmax(scored, |c| gated(c, c.s_r)),
    };
    Ok(match pick {
        Some(i) => Explanation::from_scored(scene, &scored[i], threshold, false),
        None => {
            let i = argmax(scored, |c| Some(c.s_f)).unwrap();
            Explanation::from_scored(scene, &scored[i], threshold, true)
        }
    })
}

/// Discards candidates with `S_f <= T`, then returns the highest critic
/// score (first index on ties). Falls back to the most fluent candidate,
/// flagged, when nothing passes.
pub fn select_explanation(
    candidates: &[Candidate],
    scene: &Scene,
    model: &CriticModel,
    grounder: &impl Grounder,
    threshold: f64,
) -> Result<Explanation> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate explanations".into()));
    }
    let scored = score_candidates(candidates, scene, model, grounder)?;
    select_from(scene, &scored, Selector::PhraseCritic, threshold)
}

/// The most similar other class: smallest attribute distance between its
/// profile and the query scene's true attributes, first class on ties.
pub fn counterfactual_class(scene: &Scene, profiles: &[ClassProfile], taxonomy: &Taxonomy) -> Result<usize> {
    if profiles.len() < 2 {
        return Err(Error::Config("counterfactuals need at least two classes".into()));
    }
    let table = scene.attribute_table(taxonomy);
    profiles
        .iter()
        .filter(|p| p.id != scene.class)
        .map(|p| (crate::worldsim::slot_distance(&p.attributes, &table), p.id))
        .min()
        .map(|(_, id)| id)
        .ok_or_else(|| Error::Config("no class other than the query's".into()))
}

/// Sampling settings for the neighbor's candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub threshold: f64,
    pub candidates: usize,
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            candidates: crate::generation::DEFAULT_CANDIDATES,
            error_rate: crate::generation::DEFAULT_ERROR_RATE,
            seed: 0,
        }
    }
}

/// Samples a candidate pool for `scene` under its own class and selects with the critic.
pub fn explain_scene(
    scene: &Scene,
    dataset: &Dataset,
    model: &CriticModel,
    lm: &ExplanationLm,
    config: &SelectionConfig,
) -> Result<(Vec<ScoredCandidate>, Explanation)> {
    let profile = dataset.profile_of(scene);
    let cands = sample_candidates(
        scene,
        profile,
        &dataset.taxonomy,
        lm,
        config.candidates,
        config.error_rate,
        config.seed,
    )?;
    let grounder = dataset_grounder(dataset);
    let scored = score_candidates(&cands, scene, model, &grounder)?;
    let chosen = select_from(scene, &scored, Selector::PhraseCritic, config.threshold)?;
    Ok((scored, chosen))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseScore {
    pub text: String,
    pub critic_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub scene_id: usize,
    pub class: usize,
    pub class_name: String,
    pub neighbor_scene: usize,
    pub evidence: String,
    pub negation: String,
    pub conditional: String,
    /// Critic score of each neighbor phrase grounded alone in the query scene.
    pub scores: Vec<PhraseScore>,
    #[serde(skip)]
    pub evidence_phrase: Option<AttributePhrase>,
}

/// Nearest scene of `class` by attribute distance to `query`, first on ties.
pub fn nearest_scene<'a>(query: &Scene, class: usize, dataset: &'a Dataset) -> Result<&'a Scene> {
    let table = query.attribute_table(&dataset.taxonomy);
    dataset
        .scenes
        .iter()
        .filter(|s| s.class == class && s.id != query.id)
        .map(|s| (crate::worldsim::slot_distance(&s.attribute_table(&dataset.taxonomy), &table), s))
        .min_by_key(|(d, s)| (*d, s.id))
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Empty(format!("class {class} has no scene")))
}

/// Scores each phrase alone on `query` and returns the lowest-scoring index
/// (first on ties) with all scores.
pub fn weakest_phrase(
    phrases: &[AttributePhrase],
    query: &Scene,
    model: &CriticModel,
    grounder: &impl Grounder,
) -> Result<(usize, Vec<f64>)> {
    if phrases.is_empty() {
        return Err(Error::Empty("neighbor explanation has no phrases".into()));
    }
    let scores = phrases
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = grounder.ground_phrase(p, query, i)?;
            model.score(&[step_for(&g, &model.vocab)])
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

pub fn counterfactual_evidence(
    query: &Scene,
    class: usize,
    dataset: &Dataset,
    model: &CriticModel,
    lm: &ExplanationLm,
    config: &SelectionConfig,
) -> Result<Counterfactual> {
    let neighbor = nearest_scene(query, class, dataset)?;
    let (_, explanation) = explain_scene(neighbor, dataset, model, lm, config)?;
    let phrases: Vec<AttributePhrase> = explanation.phrases().into_iter().cloned().collect();
    let grounder = dataset_grounder(dataset);
    let (best, scores) = weakest_phrase(&phrases, query, model, &grounder)?;
    let evidence = phrases[best].text();
    let class_name = dataset.profiles[class].name.clone();
    let (negation, conditional) = negate_phrase(&evidence, &class_name);
    Ok(Counterfactual {
        scene_id: query.id,
        class,
        class_name,
        neighbor_scene: neighbor.id,
        evidence,
        negation,
        conditional,
        scores: phrases
            .iter()
            .zip(&scores)
            .map(|(p, s)| PhraseScore {
                text: p.text(),
                critic_score: *s,
            })
            .collect(),
        evidence_phrase: Some(phrases[best].clone()),
    })
}

fn with_article(phrase: &str) -> String {
    let noun = phrase.rsplit(' ').next().unwrap_or(phrase);
    let plural = noun == "feet" || (noun.ends_with('s') && !noun.ends_with("ss"));
    if plural {
        phrase.to_string()
    } else {
        format!("a {phrase}")
    }
}

/// The negated and the conditional counterfactual sentence for a phrase.
pub fn negate_phrase(phrase: &str, class_name: &str) -> (String, String) {
    let np = with_article(phrase);
    (
        format!("this bird does not have {np}"),
        format!("if this bird had been a {class_name}, it would have had {np}"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseAnnotation {
    pub text: String,
    pub part: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub s_i: f64,
    pub critic_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualAnnotation {
    pub class: String,
    pub evidence: String,
    pub negation: String,
    pub conditional: String,
}

/// Per-scene output record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub scene_id: usize,
    pub sentence: String,
    pub s_f: f64,
    pub s_r: Option<f64>,
    pub fallback: bool,
    pub phrases: Vec<PhraseAnnotation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterfactual: Option<CounterfactualAnnotation>,
}

impl Annotation {
    pub fn new(explanation: &Explanation, model: &CriticModel, counterfactual: Option<&Counterfactual>) -> Result<Self> {
        Ok(Self {
            scene_id: explanation.scene_id,
            sentence: explanation.sentence(),
            s_f: explanation.s_f,
            s_r: explanation.s_r,
            fallback: explanation.fallback,
            phrases: explanation
                .grounded
                .iter()
                .map(|g| {
                    Ok(PhraseAnnotation {
                        text: g.phrase.text(),
                        part: g.part.clone(),
                        bbox: g.bbox,
                        s_i: g.score,
                        critic_score: model.score(&[step_for(g, &model.vocab)])?,
                    })
                })
                .collect::<Result<_>>()?,
            counterfactual: counterfactual.map(|c| CounterfactualAnnotation {
                class: c.class_name.clone(),
                evidence: c.evidence.clone(),
                negation: c.negation.clone(),
                conditional: c.conditional.clone(),
            }),
        })
    }
}

/// Grounds and scores a fixed sentence on a scene.
pub fn critic_score_tokens<S: AsRef<str>>(
    tokens: &[S],
    scene: &Scene,
    dataset: &Dataset,
    model: &CriticModel,
) -> Result<Option<f64>> {
    let grounded = ground_tokens(tokens, scene, &dataset.taxonomy, &dataset_grounder(dataset))?;
    if grounded.is_empty() {
        return Ok(None);
    }
    Ok(Some(model.score(&steps_for(&grounded, &model.vocab))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{Hyper, Vocab};
    use crate::grounding::{GrounderConfig, RetrievalGrounder};
    
    use crate::worldsim::{build_taxonomy, render_scene, sample_class_profiles, ProfileConfig, TaxonomyConfig};

    #[test]
    fn negation_templates() {
        let (n, c) = negate_phrase("long flat bill", "red faced cormorant");
        assert_eq!(n, "this bird does not have a long flat bill");
        assert_eq!(c, "if this bird had been a red faced cormorant, it would have had a long flat bill");
        let (n, _) = negate_phrase("black wings", "x");
        assert_eq!(n, "this bird does not have black wings");
        for p in ["small feet", "red beak", "speckled belly"] {
            let (n, c) = negate_phrase(p, "solid grebe");
            assert!(n.contains(p) && c.contains(p));
        }
    }

    fn world() -> (Taxonomy, Vec<ClassProfile>) {
        let t = build_taxonomy(&TaxonomyConfig::default(), 0).unwrap();
        let p = sample_class_profiles(&t, &ProfileConfig::default(), 0).unwrap();
        (t, p)
    }

    fn fake(index: usize, s_f: f64, s_r: Option<f64>) -> ScoredCandidate {
        ScoredCandidate {
            index,
            tokens: vec![format!("c{index}")],
            s_f,
            grounded: Vec::new(),
            s_r,
        }
    }

    #[test]
    fn gate_beats_relevance() {
        let (t, p) = world();
        let scene = render_scene(&p[0], &t, 0, 0.0, 0).unwrap();
        let pool = [fake(0, -10.0, Some(100.0)), fake(1, -3.0, Some(0.5))];
        let e = select_from(&scene, &pool, Selector::PhraseCritic, -5.0).unwrap();
        assert_eq!((e.candidate, e.fallback, e.gated_score), (1, false, 0.5));
    }

    #[test]
    fn all_gated_falls_back_to_fluency() {
        let (t, p) = world();
        let scene = render_scene(&p[0], &t, 0, 0.0, 0).unwrap();
        let pool = [fake(0, -10.0, Some(3.0)), fake(1, -7.0, Some(-1.0)), fake(2, -7.0, Some(9.0))];
        let e = select_from(&scene, &pool, Selector::PhraseCritic, -5.0).unwrap();
        assert_eq!((e.candidate, e.fallback, e.gated_score), (1, true, 0.0));
        assert!(select_from(&scene, &[], Selector::PhraseCritic, -5.0).is_err());
    }

    #[test]
    fn negative_relevance_still_selects_a_survivor() {
        let (t, p) = world();
        let scene = render_scene(&p[0], &t, 0, 0.0, 0).unwrap();
        let pool = [fake(0, -9.0, Some(5.0)), fake(1, -2.0, Some(-3.0)), fake(2, -1.0, Some(-2.0))];
        let e = select_from(&scene, &pool, Selector::PhraseCritic, -5.0).unwrap();
        assert_eq!((e.candidate, e.fallback), (2, false));
    }

    #[test]
    fn counterfactual_class_is_the_nearest_other() {
        let (t, p) = world();
        for (i, prof) in p.iter().enumerate() {
            let scene = render_scene(prof, &t, i, 0.3, i as u64).unwrap();
            let c = counterfactual_class(&scene, &p, &t).unwrap();
            assert_ne!(c, scene.class);
            let table = scene.attribute_table(&t);
            let dist = |q: &ClassProfile| {
                let mut d = 0;
                for part in 0..t.parts.len() {
                    for slot in 0..3 {
                        d += (q.attributes[part][slot] != table[part][slot]) as usize;
                    }
                }
                d
            };
            let best = p.iter().filter(|q| q.id != scene.class).map(dist).min().unwrap();
            let first = p.iter().find(|q| q.id != scene.class && dist(q) == best).unwrap();
            assert_eq!(c, first.id);
        }
        assert!(counterfactual_class(&render_scene(&p[0], &t, 0, 0.0, 0).unwrap(), &p[..1], &t).is_err());
    }

    #[test]
    fn two_part_neighbor_wins() {
        let (t, mut p) = world();
        p.truncate(3);
        let scene = render_scene(&p[0], &t, 0, 0.0, 0).unwrap();
        p[1].attributes = p[0].attributes.clone();
        p[2].attributes = p[0].attributes.clone();
        for part in 0..2 {
            p[1].attributes[part][0] = if p[0].attributes[part][0] == "red" { "black" } else { "red" }.into();
        }
        for part in 0..5 {
            p[2].attributes[part][0] = if p[0].attributes[part][0] == "red" { "black" } else { "red" }.into();
        }
        p.swap(1, 2);
        p[1].id = 1;
        p[2].id = 2;
        assert_eq!(counterfactual_class(&scene, &p, &t).unwrap(), 2);
    }

    #[test]
    fn weakest_phrase_is_exact_argmin() {
        let (t, p) = world();
        let scene = render_scene(&p[0], &t, 0, 0.0, 0).unwrap();
        let model = CriticModel::init(Hyper::default(), Vocab::new(t.lexicon.tokens()), t.feature_dim() + 4, 3).unwrap();
        let g = RetrievalGrounder::new(&t, GrounderConfig::default());
        let phrases: Vec<AttributePhrase> = p[1]
            .salient
            .iter()
            .map(|f| AttributePhrase::new(vec![p[1].attribute(*f).to_string()], t.parts[f.part].clone(), &t.lexicon))
            .collect();
        assert!(!phrases.is_empty());
        let (best, scores) = weakest_phrase(&phrases, &scene, &model, &g).unwrap();
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(best, scores.iter().position(|s| *s == min).unwrap());
        assert!(weakest_phrase(&[], &scene, &model, &g).is_err());
    }
}
