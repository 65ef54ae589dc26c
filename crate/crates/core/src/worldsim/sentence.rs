use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::profile::{ClassProfile, Feature};
use super::scene::Scene;
use super::taxonomy::{Category, Taxonomy};
use crate::rng::{self, domain};
use crate::{Error, Result};

/// Position and original token of the single wrong word in a foil sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoilMark {
    pub index: usize,
    pub original: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub foil: Option<FoilMark>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens, foil: None }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Applies the recorded correction; identity for non-foil sentences.
    pub fn corrected(&self) -> Sentence {
        let mut tokens = self.tokens.clone();
        if let Some(mark) = &self.foil {
            tokens[mark.index] = mark.original.clone();
        }
        Sentence::new(tokens)
    }
}

/// One attribute mention to realize in a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Mention {
    pub part: usize,
    pub adjectives: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Piece {
    Word(&'static str),
    /// "adj ... noun"
    Phrase,
    /// "noun is adj"
    Predicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub pieces: &'static [Piece],
}

impl Frame {
    pub fn slots(&self) -> usize {
        self.pieces
            .iter()
            .filter(|p| !matches!(p, Piece::Word(_)))
            .count()
    }
}

use Piece::{Phrase as P, Predicate as Q, Word as W};

/// Six sentence frames mentioning two to four attributes, in two families:
/// even indices read "this is a ... with a ...", odd ones "this bird has a ...".
pub const FRAMES: [Frame; 6] = [
    Frame {
        pieces: &[W("this"), W("is"), W("a"), P, W("with"), W("a"), P],
    },
    Frame {
        pieces: &[W("this"), W("bird"), W("has"), W("a"), P, W("and"), W("a"), P],
    },
    Frame {
        pieces: &[W("this"), W("is"), W("a"), P, W("with"), W("a"), P, W("and"), W("a"), P],
    },
    Frame {
        pieces: &[W("this"), W("bird"), W("has"), W("a"), P, W("a"), P, W("and"), W("a"), P],
    },
    Frame {
        pieces: &[
            W("this"), W("is"), W("a"), P, W("with"), W("a"), P, W("a"), P, W("and"), W("a"), P,
        ],
    },
    Frame {
        pieces: &[
            W("this"), W("bird"), W("has"), W("a"), P, W("a"), P, W("a"), P, W("and"), W("its"), Q,
        ],
    },
];

/// Number of frame families; frame `i` belongs to family `i % FAMILIES`.
pub const FAMILIES: usize = 2;

pub fn frames_with_slots(slots: usize) -> Vec<usize> {
    FRAMES
        .iter()
        .enumerate()
        .filter(|(_, f)| f.slots() == slots)
        .map(|(i, _)| i)
        .collect()
}

/// Fills a frame with mentions in order.
pub fn realize(frame: &Frame, mentions: &[Mention], taxonomy: &Taxonomy) -> Vec<String> {
    assert_eq!(frame.slots(), mentions.len(), "frame slot count");
    let mut out = Vec::new();
    let mut next = mentions.iter();
    for piece in frame.pieces {
        match piece {
            Piece::Word(w) => out.push(w.to_string()),
            Piece::Phrase => {
                let m = next.next().unwrap();
                out.extend(m.adjectives.iter().cloned());
                out.push(taxonomy.surface[m.part].clone());
            }
            Piece::Predicate => {
                let m = next.next().unwrap();
                out.push(taxonomy.surface[m.part].clone());
                out.push("is".to_string());
                for (i, a) in m.adjectives.iter().enumerate() {
                    if i > 0 {
                        out.push("and".to_string());
                    }
                    out.push(a.clone());
                }
            }
        }
    }
    out
}

/// All order-preserving subsets of the salient features with 2 to 4 members.
pub fn salient_subsets(count: usize) -> Vec<Vec<usize>> {
    let max = count.min(4);
    let mut out = Vec::new();
    for mask in 0u32..(1 << count) {
        let size = mask.count_ones() as usize;
        if (2..=max).contains(&size) {
            out.push((0..count).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

/// Builds mentions for `features` with the given attribute source.
pub(crate) fn mentions_for(
    features: &[Feature],
    mut attribute: impl FnMut(Feature) -> String,
) -> Vec<Mention> {
    features
        .iter()
        .map(|&f| Mention {
            part: f.part,
            adjectives: vec![attribute(f)],
        })
        .collect()
}

pub(crate) fn true_attribute(scene: &Scene, taxonomy: &Taxonomy, feature: Feature) -> String {
    let (_, region) = scene
        .region_of_part(&taxonomy.parts[feature.part])
        .expect("scene renders every part");
    region
        .attribute(feature.category)
        .expect("attribute category")
        .to_string()
}

/// `count` ground-truth sentences for a scene, each over a distinct subset of
/// the class's salient features and using the scene's true attributes.
pub fn ground_truth_sentences(
    scene: &Scene,
    profile: &ClassProfile,
    taxonomy: &Taxonomy,
    count: usize,
    seed: u64,
) -> Result<Vec<Sentence>> {
    if scene.regions.len() < 2 {
        return Err(Error::Config("scene needs at least two regions".into()));
    }
    let mut subsets = salient_subsets(profile.salient.len());
    if count > subsets.len() {
        return Err(Error::Config(format!(
            "{count} sentences requested but only {} distinct attribute subsets exist",
            subsets.len()
        )));
    }
    let mut rng = rng::stream(seed, domain::SENTENCE, scene.id as u64);
    subsets.shuffle(&mut rng);
    Ok(subsets
        .into_iter()
        .take(count)
        .map(|subset| {
            let features: Vec<Feature> = subset.iter().map(|&i| profile.salient[i]).collect();
            let frame = &FRAMES[profile.pick_frame(features.len(), &mut rng)];
            let mentions = mentions_for(&features, |f| true_attribute(scene, taxonomy, f));
            Sentence::new(realize(frame, &mentions, taxonomy))
        })
        .collect())
}

pub fn ground_truth_sentence(
    scene: &Scene,
    profile: &ClassProfile,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<Sentence> {
    Ok(ground_truth_sentences(scene, profile, taxonomy, 1, seed)?.remove(0))
}

/// Replaces exactly one attribute or noun token by a different token of the
/// same category. The category is drawn uniformly among those present, then
/// the position, then the replacement.
pub fn make_foil_sentence(sentence: &Sentence, taxonomy: &Taxonomy, seed: u64) -> Result<Sentence> {
    let mut rng = rng::stream(seed, domain::FOIL, 0);
    let mut by_category: Vec<(Category, Vec<usize>)> = Vec::new();
    for (i, tok) in sentence.tokens.iter().enumerate() {
        if let Some(cat) = taxonomy.category_of(tok) {
            match by_category.iter_mut().find(|(c, _)| *c == cat) {
                Some((_, positions)) => positions.push(i),
                None => by_category.push((cat, vec![i])),
            }
        }
    }
    if by_category.is_empty() {
        return Err(Error::NoFlip(format!(
            "\"{}\" has no attribute or noun token",
            sentence.text()
        )));
    }
    by_category.sort_by_key(|(c, _)| *c);
    let (category, positions) = &by_category[rng.random_range(0..by_category.len())];
    let index = positions[rng.random_range(0..positions.len())];
    let original = sentence.tokens[index].clone();
    let options = replacements(taxonomy, *category, &original);
    let replacement = options[rng.random_range(0..options.len())].clone();

    let mut tokens = sentence.tokens.clone();
    tokens[index] = replacement;
    Ok(Sentence {
        tokens,
        foil: Some(FoilMark { index, original }),
    })
}

/// Same-category substitutes for `token`. Nouns are replaced by the surface
/// noun of a different part.
pub fn replacements(taxonomy: &Taxonomy, category: Category, token: &str) -> Vec<String> {
    match category {
        Category::Part => {
            let own = taxonomy.noun_part(token);
            taxonomy
                .surface
                .iter()
                .enumerate()
                .filter(|(p, _)| Some(*p) != own)
                .map(|(_, s)| s.clone())
                .collect()
        }
        _ => taxonomy
            .tokens(category)
            .iter()
            .filter(|t| t.as_str() != token)
            .cloned()
            .collect(),
    }
}
