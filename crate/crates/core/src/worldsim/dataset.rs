use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::profile::{sample_class_profiles, ClassProfile, ProfileConfig};
use super::scene::{render_scene, Scene, Split};
use super::sentence::{ground_truth_sentences, make_foil_sentence, FoilMark, Sentence};
use super::taxonomy::{build_taxonomy, Taxonomy, TaxonomyConfig};
use crate::grounding::GrounderConfig;
use crate::rng::{self, domain};
use crate::textproc;
use crate::{Error, Result};

pub const DATASET_FORMAT: u64 = 1;

const FOIL_ATTEMPTS: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub taxonomy: TaxonomyConfig,
    pub profiles: ProfileConfig,
    pub scenes_per_class: usize,
    pub sentences_per_scene: usize,
    /// Foils are derived from the first `foils_per_scene` ground-truth sentences.
    pub foils_per_scene: usize,
    /// Train / val / test fractions.
    pub splits: [f64; 3],
    pub grounder: GrounderConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            taxonomy: TaxonomyConfig::default(),
            profiles: ProfileConfig::default(),
            scenes_per_class: 150,
            sentences_per_scene: 10,
            foils_per_scene: 2,
            splits: [0.7, 0.1, 0.2],
            grounder: GrounderConfig::default(),
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        let sum: f64 = self.splits.iter().sum();
        if self.splits.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must lie in [0, 1] and sum to 1",
                self.splits
            )));
        }
        if self.scenes_per_class == 0 {
            return Err(Error::Config("scenes_per_class must be positive".into()));
        }
        if self.foils_per_scene > self.sentences_per_scene {
            return Err(Error::Config(
                "foils_per_scene cannot exceed sentences_per_scene".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub scene_id: usize,
    pub tokens: Vec<String>,
    pub foil: Option<FoilMark>,
}

impl SentenceRecord {
    pub fn sentence(&self) -> Sentence {
        Sentence {
            tokens: self.tokens.clone(),
            foil: self.foil.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format: u64,
    pub seed: u64,
    pub config: DatasetConfig,
    pub taxonomy: Taxonomy,
    pub profiles: Vec<ClassProfile>,
    pub scenes: Vec<Scene>,
    /// Scene-major: each scene's ground-truth sentences, then its foils.
    pub sentences: Vec<SentenceRecord>,
}

pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let taxonomy = build_taxonomy(&config.taxonomy, seed)?;
    let profiles = sample_class_profiles(&taxonomy, &config.profiles, seed)?;

    let mut scenes = Vec::with_capacity(profiles.len() * config.scenes_per_class);
    for profile in &profiles {
        let splits = stratified_splits(config.scenes_per_class, config.splits, seed, profile.id);
        for (j, split) in splits.into_iter().enumerate() {
            let id = profile.id * config.scenes_per_class + j;
            let mut scene = render_scene(profile, &taxonomy, id, profile.noise, seed)?;
            scene.split = split;
            scenes.push(scene);
        }
    }

    let mut sentences = Vec::new();
    for scene in &scenes {
        let profile = &profiles[scene.class];
        let gt = ground_truth_sentences(scene, profile, &taxonomy, config.sentences_per_scene, seed)?;
        let foils: Vec<Sentence> = gt
            .iter()
            .take(config.foils_per_scene)
            .enumerate()
            .filter_map(|(k, s)| contradicting_foil(s, scene, &taxonomy, seed, k))
            .collect();
        for s in gt.into_iter().chain(foils) {
            sentences.push(SentenceRecord {
                scene_id: scene.id,
                tokens: s.tokens,
                foil: s.foil,
            });
        }
    }

    Ok(Dataset {
        format: DATASET_FORMAT,
        seed,
        config: config.clone(),
        taxonomy,
        profiles,
        scenes,
        sentences,
    })
}

/// First foil (over a bounded number of attempts) that the scene actually
/// contradicts; noun swaps can accidentally land on a true phrase.
fn contradicting_foil(
    source: &Sentence,
    scene: &Scene,
    taxonomy: &Taxonomy,
    seed: u64,
    k: usize,
) -> Option<Sentence> {
    (0..FOIL_ATTEMPTS).find_map(|attempt| {
        let s = make_foil_sentence(
            source,
            taxonomy,
            rng::mix(&[seed, scene.id as u64, k as u64, attempt]),
        )
        .ok()?;
        let phrases = textproc::chunk_tokens(&s.tokens, &taxonomy.lexicon);
        let contradicts = phrases
            .iter()
            .any(|p| !scene.supports(taxonomy, &p.adjectives, &p.noun));
        contradicts.then_some(s)
    })
}

/// Per-class split assignment: shuffled indices, the first round(f_train * n)
/// go to train, the next round(f_val * n) to val, the rest to test.
fn stratified_splits(n: usize, fractions: [f64; 3], seed: u64, class: usize) -> Vec<Split> {
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, domain::SPLIT, class as u64));
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

impl Dataset {
    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn scene(&self, id: usize) -> Option<&Scene> {
        self.scenes.get(id).filter(|s| s.id == id)
    }

    pub fn profile_of(&self, scene: &Scene) -> &ClassProfile {
        &self.profiles[scene.class]
    }

    /// All sentence records (ground truth and foils) of one scene.
    pub fn sentences_of(&self, scene_id: usize) -> &[SentenceRecord] {
        let start = self.sentences.partition_point(|r| r.scene_id < scene_id);
        let end = self.sentences.partition_point(|r| r.scene_id <= scene_id);
        &self.sentences[start..end]
    }

    pub fn ground_truth_of(&self, scene_id: usize) -> impl Iterator<Item = &SentenceRecord> {
        self.sentences_of(scene_id).iter().filter(|r| r.foil.is_none())
    }

    pub fn foils_of(&self, scene_id: usize) -> impl Iterator<Item = &SentenceRecord> {
        self.sentences_of(scene_id).iter().filter(|r| r.foil.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Dataset> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt {
            what: "dataset",
            message: e.to_string(),
        })?;
        match value.get("format").and_then(|f| f.as_u64()) {
            Some(DATASET_FORMAT) => {}
            Some(found) => {
                return Err(Error::Version {
                    what: "dataset",
                    found,
                    expected: DATASET_FORMAT,
                })
            }
            None => {
                return Err(Error::Corrupt {
                    what: "dataset",
                    message: "missing \"format\" field".into(),
                })
            }
        }
        let data: Dataset = serde_json::from_value(value).map_err(|e| Error::Corrupt {
            what: "dataset",
            message: e.to_string(),
        })?;
        data.check()?;
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Dataset::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        let corrupt = |message: String| Error::Corrupt {
            what: "dataset",
            message,
        };
        for (i, s) in self.scenes.iter().enumerate() {
            if s.id != i {
                return Err(corrupt(format!("scene at position {i} has id {}", s.id)));
            }
            if s.class >= self.profiles.len() || s.keypoints.len() != s.regions.len() {
                return Err(corrupt(format!("scene {i} is inconsistent")));
            }
        }
        if self
            .sentences
            .windows(2)
            .any(|w| w[0].scene_id > w[1].scene_id)
            || self
                .sentences
                .last()
                .is_some_and(|r| r.scene_id >= self.scenes.len())
        {
            return Err(corrupt("sentences are not scene-major".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            profiles: ProfileConfig {
                num_classes: 4,
                ..Default::default()
            },
            scenes_per_class: 20,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_stratification() {
        let cfg = small();
        let d = generate_dataset(&cfg, 3).unwrap();
        assert_eq!(d.scenes.len(), 80);
        for class in 0..4 {
            let count = |split| {
                d.scenes
                    .iter()
                    .filter(|s| s.class == class && s.split == split)
                    .count() as f64
            };
            assert!((count(Split::Train) - 14.0).abs() <= 1.0);
            assert!((count(Split::Val) - 2.0).abs() <= 1.0);
            assert!((count(Split::Test) - 4.0).abs() <= 1.0);
        }
        for s in &d.scenes {
            assert_eq!(d.ground_truth_of(s.id).count(), 10);
            assert!(d.foils_of(s.id).count() <= 2);
        }
    }

    #[test]
    fn foils_contradict_their_scene() {
        let d = generate_dataset(&small(), 4).unwrap();
        let mut n = 0;
        for r in d.sentences.iter().filter(|r| r.foil.is_some()) {
            let scene = d.scene(r.scene_id).unwrap();
            let phrases = textproc::chunk_tokens(&r.tokens, &d.taxonomy.lexicon);
            assert!(phrases
                .iter()
                .any(|p| !scene.supports(&d.taxonomy, &p.adjectives, &p.noun)));
            let restored = r.sentence().corrected();
            assert!(d.ground_truth_of(r.scene_id).any(|g| g.tokens == restored.tokens));
            n += 1;
        }
        assert!(n >= 150);
    }

    #[test]
    fn byte_identical_per_seed_and_roundtrip() {
        let a = generate_dataset(&small(), 8).unwrap().to_json().unwrap();
        let b = generate_dataset(&small(), 8).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let back = Dataset::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn invalid_splits_rejected() {
        let cfg = DatasetConfig {
            splits: [0.7, 0.2, 0.2],
            ..small()
        };
        assert!(matches!(generate_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_format_is_a_version_error() {
        let text = generate_dataset(&small(), 1).unwrap().to_json().unwrap();
        let bumped = text.replacen("\"format\":1", "\"format\":7", 1);
        assert!(matches!(
            Dataset::from_json(&bumped),
            Err(Error::Version { found: 7, .. })
        ));
        assert!(matches!(
            Dataset::from_json(&text[..text.len() / 2]),
            Err(Error::Corrupt { .. })
        ));
    }
}
