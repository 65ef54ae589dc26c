//! Hard negatives by within-category flips.
//!
//! A negative replaces one token in each of one or two phrases of a true
//! sentence: an adjective by another token of its category, or the head noun
//! by the surface noun of another part. Two-phrase flips are only drawn when
//! at least one phrase stays untouched.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::textproc::{self, AttributePhrase};
use crate::worldsim::{replacements, Category, Dataset, Scene, Split, Taxonomy};
use crate::{Error, Result};

pub const DEFAULT_NEGATIVES: usize = 10;

/// A single-token substitution at a sentence position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flip {
    pub position: usize,
    pub replacement: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub scene_id: usize,
    pub split: Split,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    /// Token positions changed in `negative`.
    pub flipped: Vec<usize>,
}

/// All single-token flips of one phrase, positioned in sentence coordinates.
fn phrase_flips(phrase: &AttributePhrase, taxonomy: &Taxonomy) -> Vec<Flip> {
    let mut out = Vec::new();
    for (i, adj) in phrase.adjectives.iter().enumerate() {
        for r in replacements(taxonomy, phrase.categories[i], adj) {
            out.push(Flip {
                position: phrase.adjective_positions[i],
                replacement: r,
            });
        }
    }
    for r in replacements(taxonomy, Category::Part, &phrase.noun) {
        out.push(Flip {
            position: phrase.noun_position,
            replacement: r,
        });
    }
    out
}

/// Replaces one token of the phrase by a distinct same-category token. The
/// token is drawn uniformly among the adjectives and the head noun, then the
/// replacement uniformly among its alternatives.
pub fn flip_phrase(phrase: &AttributePhrase, taxonomy: &Taxonomy, seed: u64) -> Result<AttributePhrase> {
    let mut rng = rng::stream(seed, domain::NEGATIVES, 0);
    let mut slots: Vec<(usize, Vec<String>)> = phrase
        .adjectives
        .iter()
        .enumerate()
        .map(|(i, a)| (i, replacements(taxonomy, phrase.categories[i], a)))
        .collect();
    slots.push((
        phrase.adjectives.len(),
        replacements(taxonomy, Category::Part, &phrase.noun),
    ));
    slots.retain(|(_, r)| !r.is_empty());
    if slots.is_empty() {
        return Err(Error::NoFlip(format!("\"{}\" has no valid flip", phrase.text())));
    }
    let (slot, options) = &slots[rng.random_range(0..slots.len())];
    let token = options[rng.random_range(0..options.len())].clone();
    let mut adjectives = phrase.adjectives.clone();
    let mut noun = phrase.noun.clone();
    if *slot < adjectives.len() {
        adjectives[*slot] = token;
    } else {
        noun = token;
    }
    let mut out = AttributePhrase::new(adjectives, noun, &taxonomy.lexicon);
    out.span = phrase.span;
    out.adjective_positions = phrase.adjective_positions.clone();
    out.noun_position = phrase.noun_position;
    Ok(out)
}

/// Every admissible negative: one phrase flipped, or two phrases flipped when
/// the sentence has at least three. Grouped by flip count.
fn flip_space(phrases: &[AttributePhrase], taxonomy: &Taxonomy) -> [Vec<Vec<Flip>>; 2] {
    let per_phrase: Vec<Vec<Flip>> = phrases.iter().map(|p| phrase_flips(p, taxonomy)).collect();
    let singles = per_phrase.iter().flatten().map(|f| vec![f.clone()]).collect();
    let mut doubles = Vec::new();
    if phrases.len() >= 3 {
        for i in 0..per_phrase.len() {
            for j in (i + 1)..per_phrase.len() {
                for a in &per_phrase[i] {
                    for b in &per_phrase[j] {
                        doubles.push(vec![a.clone(), b.clone()]);
                    }
                }
            }
        }
    }
    [singles, doubles]
}

fn apply(tokens: &[String], flips: &[Flip]) -> Vec<String> {
    let mut out = tokens.to_vec();
    for f in flips {
        out[f.position] = f.replacement.clone();
    }
    out
}

/// Up to `k` distinct negatives of `tokens`. Draws without replacement: the
/// flip count uniformly among counts with candidates left, then a negative
/// uniformly within that count. Returns the whole space when it has fewer
/// than `k` members. `keep` filters candidate negatives.
fn sample_negatives(
    tokens: &[String],
    taxonomy: &Taxonomy,
    k: usize,
    seed: u64,
    keep: impl Fn(&[String]) -> bool,
) -> Result<Vec<(Vec<String>, Vec<usize>)>> {
    let phrases = textproc::chunk_tokens(tokens, &taxonomy.lexicon);
    if phrases.is_empty() {
        return Err(Error::NoFlip(format!(
            "\"{}\" has no attribute phrase",
            tokens.join(" ")
        )));
    }
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    seen.insert(tokens.to_vec());
    let mut buckets: Vec<Vec<(Vec<String>, Vec<usize>)>> = flip_space(&phrases, taxonomy)
        .into_iter()
        .map(|bucket| {
            bucket
                .into_iter()
                .map(|flips| (apply(tokens, &flips), flips.iter().map(|f| f.position).collect()))
                .filter(|(neg, _)| keep(neg) && seen.insert(neg.clone()))
                .collect()
        })
        .collect();
    let mut rng = rng::stream(seed, domain::NEGATIVES, 1);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let live: Vec<usize> = (0..buckets.len()).filter(|&b| !buckets[b].is_empty()).collect();
        if live.is_empty() {
            break;
        }
        let b = live[rng.random_range(0..live.len())];
        let i = rng.random_range(0..buckets[b].len());
        out.push(buckets[b].swap_remove(i));
    }
    Ok(out)
}

/// `min(k, space)` distinct negatives of a sentence.
pub fn make_negatives(
    tokens: &[String],
    taxonomy: &Taxonomy,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    Ok(sample_negatives(tokens, taxonomy, k, seed, |_| true)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

/// Like [`make_negatives`], restricted to negatives with at least one phrase
/// the scene does not support. An object flip onto a part that happens to
/// carry the same attribute is true of the scene and is skipped.
pub fn make_negatives_against(
    tokens: &[String],
    scene: &Scene,
    taxonomy: &Taxonomy,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<String>, Vec<usize>)>> {
    sample_negatives(tokens, taxonomy, k, seed, |neg| {
        textproc::chunk_tokens(neg, &taxonomy.lexicon)
            .iter()
            .any(|p| !scene.supports(taxonomy, &p.adjectives, &p.noun))
    })
}

/// `k` pairs for each of the first `per_scene` ground-truth sentences of
/// every scene, in scene order.
pub fn build_rank_pairs(dataset: &Dataset, per_scene: usize, k: usize, seed: u64) -> Result<Vec<RankPair>> {
    let nested: Vec<Vec<RankPair>> = dataset
        .scenes
        .par_iter()
        .map(|scene| {
            let mut out = Vec::new();
            for (j, positive) in dataset.ground_truth_of(scene.id).take(per_scene).enumerate() {
                let s = rng::mix(&[seed, scene.id as u64, j as u64]);
                for (negative, flipped) in
                    make_negatives_against(&positive.tokens, scene, &dataset.taxonomy, k, s)?
                {
                    out.push(RankPair {
                        scene_id: scene.id,
                        split: scene.split,
                        positive: positive.tokens.clone(),
                        negative,
                        flipped,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;
    use crate::worldsim::{build_taxonomy, generate_dataset, DatasetConfig, ProfileConfig, TaxonomyConfig};

    fn taxonomy() -> Taxonomy {
        build_taxonomy(&TaxonomyConfig::default(), 0).unwrap()
    }

    fn phrase(t: &Taxonomy, text: &str) -> AttributePhrase {
        textproc::chunk_tokens(&tokenize(text), &t.lexicon).remove(0)
    }

    #[test]
    fn flips_stay_in_category() {
        let t = taxonomy();
        let p = phrase(&t, "yellow belly");
        let mut saw_object = false;
        let mut saw_color = false;
        for seed in 0..200 {
            let f = flip_phrase(&p, &t, seed).unwrap();
            assert_ne!(f.key(), p.key());
            if f.noun != p.noun {
                assert_eq!(f.adjectives, p.adjectives);
                assert!(t.noun_part(&f.noun).is_some());
                saw_object |= f.noun == "beak";
            } else {
                assert_eq!(t.category_of(&f.adjectives[0]), Some(Category::Color));
                saw_color = true;
            }
        }
        assert!(saw_object && saw_color);
        let p = phrase(&t, "red head");
        assert!((0..200).any(|s| flip_phrase(&p, &t, s).unwrap().key().0 == ["black".to_string()]));
    }

    #[test]
    fn ten_distinct_negatives_for_three_phrases() {
        let t = taxonomy();
        let s = tokenize("this is a red bird with a black beak and a yellow belly");
        let negs = make_negatives(&s, &t, 10, 3).unwrap();
        assert_eq!(negs.len(), 10);
        let set: HashSet<_> = negs.iter().collect();
        assert_eq!(set.len(), 10);
        for n in &negs {
            assert_ne!(n, &s);
            assert_eq!(textproc::chunk_tokens(n, &t.lexicon).len(), 3);
            let changed = n.iter().zip(&s).filter(|(a, b)| a != b).count();
            assert!((1..=2).contains(&changed));
        }
    }

    #[test]
    fn exhausted_space_returns_everything() {
        // a two-token category and a one-part taxonomy leave a single flip
        let mut t = taxonomy();
        t.categories.insert(Category::Size, vec!["small".into(), "large".into()]);
        t.surface.truncate(1);
        t.parts.truncate(1);
        let s = tokenize("a small beak");
        let negs = make_negatives(&s, &t, 10, 0).unwrap();
        assert_eq!(negs, vec![tokenize("a large beak")]);
    }

    #[test]
    fn no_phrase_is_an_error() {
        let t = taxonomy();
        assert!(matches!(
            make_negatives(&tokenize("this is a bird"), &t, 10, 0),
            Err(Error::NoFlip(_))
        ));
    }

    #[test]
    fn two_phrase_sentences_flip_one_phrase() {
        let t = taxonomy();
        let s = tokenize("this is a red bird with a black beak");
        let negs = make_negatives(&s, &t, 100, 0).unwrap();
        // 7 colors + 7 nouns per phrase
        assert_eq!(negs.len(), 28);
        for n in negs {
            assert_eq!(n.iter().zip(&s).filter(|(a, b)| a != b).count(), 1);
        }
    }

    fn noise_free() -> Dataset {
        let cfg = DatasetConfig {
            scenes_per_class: 10,
            profiles: ProfileConfig {
                num_classes: 4,
                noise: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        generate_dataset(&cfg, 6).unwrap()
    }

    #[test]
    fn negatives_contradict_noise_free_scenes() {
        let d = noise_free();
        let pairs = build_rank_pairs(&d, 3, 10, 1).unwrap();
        assert_eq!(pairs.len(), d.scenes.len() * 3 * 10);
        for p in &pairs {
            let scene = d.scene(p.scene_id).unwrap();
            let pos = textproc::chunk_tokens(&p.positive, &d.taxonomy.lexicon);
            assert!(pos.iter().all(|ph| scene.supports(&d.taxonomy, &ph.adjectives, &ph.noun)));
            let neg = textproc::chunk_tokens(&p.negative, &d.taxonomy.lexicon);
            assert!(neg.iter().any(|ph| !scene.supports(&d.taxonomy, &ph.adjectives, &ph.noun)));
            // hardness: single flips keep the other phrases true
            if p.flipped.len() == 1 && pos.len() >= 2 {
                assert!(neg.iter().any(|ph| scene.supports(&d.taxonomy, &ph.adjectives, &ph.noun)));
            }
            for &i in &p.flipped {
                assert_eq!(
                    d.taxonomy.category_of(&p.positive[i]),
                    d.taxonomy.category_of(&p.negative[i])
                );
            }
        }
        assert_eq!(pairs, build_rank_pairs(&d, 3, 10, 1).unwrap());
        assert_ne!(pairs, build_rank_pairs(&d, 3, 10, 2).unwrap());
    }
}
