//! Retrieval-style phrase grounding.
//!
//! A phrase is embedded as an indicator over attribute and part tokens and
//! compared by dot product with each region's indicator features; the best
//! region wins (first index on ties). The returned raw score is the match
//! count scaled by a per-part factor from the taxonomy plus Gaussian noise,
//! so equal match quality gives different raw scores on different parts.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::textproc::AttributePhrase;
use crate::worldsim::{BBox, Region, Scene, Taxonomy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrounderConfig {
    /// Standard deviation of the additive score noise.
    pub score_noise: f64,
    /// Probability that an active region indicator bit is dropped.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for GrounderConfig {
    fn default() -> Self {
        Self {
            score_noise: 0.05,
            feature_noise: 0.0,
            seed: 0,
        }
    }
}

/// Indicator over attribute tokens and parts (dimension `taxonomy.feature_dim()`).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVector(pub Vec<f64>);

impl AttributeVector {
    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedPhrase {
    pub phrase: AttributePhrase,
    /// Index of the matched region in `scene.regions`.
    pub region: usize,
    pub part: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Region features: attribute indicator followed by `[x, y, w, h]`.
    pub features: Vec<f64>,
    pub match_score: f64,
    /// Raw, unnormalized grounding score.
    pub score: f64,
}

pub fn embed_phrase(phrase: &AttributePhrase, taxonomy: &Taxonomy) -> AttributeVector {
    let mut v = vec![0.0; taxonomy.feature_dim()];
    for tok in phrase.adjectives.iter().chain(std::iter::once(&phrase.noun)) {
        if let Some(f) = taxonomy.feature_of(tok) {
            v[f] = 1.0;
        }
    }
    AttributeVector(v)
}

/// Indicator of the region's true attributes and part identity, with
/// optional bit dropout, followed by the box geometry.
pub fn region_features(
    region: &Region,
    taxonomy: &Taxonomy,
    feature_noise: f64,
    mut rng: impl Rng,
) -> Vec<f64> {
    let mut v = vec![0.0; taxonomy.feature_dim() + 4];
    let active = region
        .attrs
        .iter()
        .filter_map(|a| taxonomy.feature_of(a))
        .chain(taxonomy.part_index(&region.part).map(|p| taxonomy.part_feature(p)));
    for f in active {
        v[f] = 1.0;
    }
    if feature_noise > 0.0 {
        for x in v.iter_mut().take(taxonomy.feature_dim()) {
            if *x == 1.0 && rng.random::<f64>() < feature_noise {
                *x = 0.0;
            }
        }
    }
    let d = taxonomy.feature_dim();
    v[d..].copy_from_slice(&<[f64; 4]>::from(region.bbox));
    v
}

/// Anything that maps a phrase to one of the scene's regions with a finite score.
pub trait Grounder {
    fn ground_phrase(
        &self,
        phrase: &AttributePhrase,
        scene: &Scene,
        index: usize,
    ) -> Result<GroundedPhrase>;

    fn ground_all(&self, phrases: &[AttributePhrase], scene: &Scene) -> Result<Vec<GroundedPhrase>> {
        phrases
            .iter()
            .enumerate()
            .map(|(i, p)| self.ground_phrase(p, scene, i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetrievalGrounder<'a> {
    pub taxonomy: &'a Taxonomy,
    pub config: GrounderConfig,
}

impl<'a> RetrievalGrounder<'a> {
    pub fn new(taxonomy: &'a Taxonomy, config: GrounderConfig) -> Self {
        Self { taxonomy, config }
    }

    pub fn features(&self, scene: &Scene, region: usize) -> Vec<f64> {
        let rng = rng::stream2(
            self.config.seed,
            domain::GROUND_FEATURE,
            scene.id as u64,
            region as u64,
        );
        region_features(
            &scene.regions[region],
            self.taxonomy,
            self.config.feature_noise,
            rng,
        )
    }
}

impl Grounder for RetrievalGrounder<'_> {
    fn ground_phrase(
        &self,
        phrase: &AttributePhrase,
        scene: &Scene,
        index: usize,
    ) -> Result<GroundedPhrase> {
        if scene.regions.is_empty() {
            return Err(Error::Empty(format!("scene {} has no regions", scene.id)));
        }
        let query = embed_phrase(phrase, self.taxonomy);
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for r in 0..scene.regions.len() {
            let feats = self.features(scene, r);
            let m = query.dot(&feats[..self.taxonomy.feature_dim()]);
            if best.as_ref().is_none_or(|(_, bm, _)| m > *bm) {
                best = Some((r, m, feats));
            }
        }
        let (region, match_score, features) = best.unwrap();
        let r = &scene.regions[region];
        let kappa = self
            .taxonomy
            .part_index(&r.part)
            .map(|p| self.taxonomy.kappa[p])
            .unwrap_or(1.0);
        let mut rng = rng::stream2(
            self.config.seed,
            domain::GROUND_SCORE,
            scene.id as u64,
            index as u64,
        );
        let noise: f64 = rng.sample(StandardNormal);
        Ok(GroundedPhrase {
            phrase: phrase.clone(),
            region,
            part: r.part.clone(),
            bbox: r.bbox,
            features,
            match_score,
            score: kappa * match_score + self.config.score_noise * noise,
        })
    }
}
