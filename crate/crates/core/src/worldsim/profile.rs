use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sentence::{frames_with_slots, FAMILIES};
use super::taxonomy::{Category, Taxonomy, ATTRIBUTE_CATEGORIES};
use crate::rng::{self, domain};
use crate::{Error, Result};

/// A (part, attribute category) slot, e.g. the color of the beak.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Feature {
    pub part: usize,
    pub category: Category,
}

/// Characteristic appearance of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub id: usize,
    pub name: String,
    /// One `[color, size, pattern]` triple per part.
    pub attributes: Vec<Vec<String>>,
    pub noise: f64,
    /// Class-discriminative features explanations talk about, in mention order.
    pub salient: Vec<Feature>,
    /// Preferred frame index into `FRAMES` for 2, 3 and 4 mentions, all
    /// from one frame family.
    pub frames: Vec<usize>,
    /// Probability that a description uses the preferred frame.
    pub style: f64,
}

impl ClassProfile {
    pub fn attribute(&self, feature: Feature) -> &str {
        let slot = feature.category.slot().expect("attribute category");
        &self.attributes[feature.part][slot]
    }

    /// Number of differing part-attribute assignments.
    pub fn distance(&self, other: &ClassProfile) -> usize {
        slot_distance(&self.attributes, &other.attributes)
    }

    /// Draws a frame for `slots` mentions: the preferred one with probability
    /// `style`, otherwise uniform over all frames with that many slots.
    pub fn pick_frame(&self, slots: usize, rng: &mut impl Rng) -> usize {
        let options = frames_with_slots(slots);
        match self.frames.get(slots.wrapping_sub(2)) {
            Some(&f) if rng.random::<f64>() < self.style => f,
            _ => options[rng.random_range(0..options.len())],
        }
    }
}

pub fn slot_distance(a: &[Vec<String>], b: &[Vec<String>]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub num_classes: usize,
    pub salient_features: usize,
    /// Per-scene attribute resampling rate recorded on each profile.
    pub noise: f64,
    /// Probability that a description uses the class's preferred frame.
    pub style: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            salient_features: 4,
            noise: 0.15,
            style: 0.9,
        }
    }
}

const GENERA: [&str; 24] = [
    "warbler", "finch", "tanager", "grebe", "auklet", "cormorant", "kingfisher", "sparrow", "wren",
    "flycatcher", "oriole", "vireo", "thrush", "jay", "gull", "tern", "swallow", "blackbird",
    "bunting", "grosbeak", "cardinal", "pipit", "lark", "shrike",
];

const MAX_ATTEMPTS: usize = 64;

pub fn sample_class_profiles(
    taxonomy: &Taxonomy,
    config: &ProfileConfig,
    seed: u64,
) -> Result<Vec<ClassProfile>> {
    if config.num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {}",
            config.num_classes
        )));
    }
    let parts = taxonomy.parts.len();
    if config.salient_features < 2 || config.salient_features > parts {
        return Err(Error::Config(format!(
            "salient feature count {} outside 2..={parts}",
            config.salient_features
        )));
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(Error::Config(format!("noise {} outside [0, 1]", config.noise)));
    }
    if !(0.0..=1.0).contains(&config.style) {
        return Err(Error::Config(format!("style {} outside [0, 1]", config.style)));
    }

    let mut rng = rng::stream(seed, domain::PROFILES, 0);
    let mut profiles: Vec<ClassProfile> = Vec::with_capacity(config.num_classes);
    for id in 0..config.num_classes {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let attributes: Vec<Vec<String>> = (0..parts)
                .map(|_| {
                    ATTRIBUTE_CATEGORIES
                        .iter()
                        .map(|c| {
                            let tokens = taxonomy.tokens(*c);
                            tokens[rng.random_range(0..tokens.len())].clone()
                        })
                        .collect()
                })
                .collect();
            if profiles
                .iter()
                .all(|p| slot_distance(&p.attributes, &attributes) >= 2)
            {
                accepted = Some(attributes);
                break;
            }
        }
        let attributes = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "could not place class {id} at distance >= 2 from the others after {MAX_ATTEMPTS} attempts"
            ))
        })?;

        let mut part_order: Vec<usize> = (0..parts).collect();
        part_order.shuffle(&mut rng);
        let salient: Vec<Feature> = part_order[..config.salient_features]
            .iter()
            .map(|&part| Feature {
                part,
                category: ATTRIBUTE_CATEGORIES[rng.random_range(0..ATTRIBUTE_CATEGORIES.len())],
            })
            .collect();

        let lead = &attributes[salient[0].part][salient[0].category.slot().unwrap()];
        let genus = GENERA[id % GENERA.len()];
        let name = if id < GENERA.len() {
            format!("{lead} {genus}")
        } else {
            format!("{lead} {genus} {}", id / GENERA.len() + 1)
        };

        let family = rng.random_range(0..FAMILIES);
        let frames = (2..=4)
            .map(|slots| {
                frames_with_slots(slots)
                    .into_iter()
                    .find(|f| f % FAMILIES == family)
                    .expect("every family covers every slot count")
            })
            .collect();

        profiles.push(ClassProfile {
            id,
            name,
            attributes,
            noise: config.noise,
            salient,
            frames,
            style: config.style,
        });
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{build_taxonomy, TaxonomyConfig};

    fn taxonomy() -> Taxonomy {
        build_taxonomy(&TaxonomyConfig::default(), 0).unwrap()
    }

    #[test]
    fn twenty_classes_pairwise_distinct() {
        let t = taxonomy();
        let profiles = sample_class_profiles(&t, &ProfileConfig::default(), 5).unwrap();
        assert_eq!(profiles.len(), 20);
        // exhaustive pairwise check, counted slot by slot
        for i in 0..profiles.len() {
            for j in (i + 1)..profiles.len() {
                let mut d = 0;
                for part in 0..t.parts.len() {
                    for slot in 0..3 {
                        if profiles[i].attributes[part][slot] != profiles[j].attributes[part][slot] {
                            d += 1;
                        }
                    }
                }
                assert!(d >= 2, "classes {i} and {j} at distance {d}");
                assert_eq!(d, profiles[i].distance(&profiles[j]));
            }
        }
        let names: std::collections::HashSet<_> = profiles.iter().map(|p| &p.name).collect();
        assert_eq!(names.len(), 20);
    }

    #[test]
    fn single_class_is_rejected() {
        let cfg = ProfileConfig {
            num_classes: 1,
            ..Default::default()
        };
        assert!(sample_class_profiles(&taxonomy(), &cfg, 0).is_err());
    }

    #[test]
    fn seeds_give_different_assignments() {
        let t = taxonomy();
        let cfg = ProfileConfig::default();
        let mut differing = 0;
        for run in 0..10u64 {
            let a = sample_class_profiles(&t, &cfg, 2 * run).unwrap();
            let b = sample_class_profiles(&t, &cfg, 2 * run + 1).unwrap();
            if a != b {
                differing += 1;
            }
            assert_eq!(a, sample_class_profiles(&t, &cfg, 2 * run).unwrap());
        }
        assert_eq!(differing, 10);
    }

    #[test]
    fn every_part_has_one_color() {
        let t = taxonomy();
        for p in sample_class_profiles(&t, &ProfileConfig::default(), 9).unwrap() {
            for attrs in &p.attributes {
                assert_eq!(attrs.len(), 3);
                assert_eq!(t.category_of(&attrs[0]), Some(Category::Color));
            }
            let parts: std::collections::HashSet<_> = p.salient.iter().map(|f| f.part).collect();
            assert_eq!(parts.len(), p.salient.len());
        }
    }
}
