//! The synthetic world: a closed attribute taxonomy, per-class attribute
//! profiles, rendered scenes with part boxes and keypoints, template
//! sentences and their single-token foils.

mod dataset;
mod profile;
mod scene;
mod sentence;
mod taxonomy;

pub use dataset::{generate_dataset, Dataset, DatasetConfig, SentenceRecord, DATASET_FORMAT};
pub use profile::{sample_class_profiles, slot_distance, ClassProfile, Feature, ProfileConfig};
pub use scene::{render_scene, BBox, Region, Scene, Split};
pub use sentence::{
    frames_with_slots, ground_truth_sentence, ground_truth_sentences, make_foil_sentence, realize,
    salient_subsets, FoilMark, Frame, Mention, Sentence, FRAMES,
};
pub(crate) use sentence::{mentions_for, true_attribute};
pub use sentence::replacements;
pub use taxonomy::{
    build_taxonomy, Category, LexEntry, Lexicon, Pos, Taxonomy, TaxonomyConfig,
    ATTRIBUTE_CATEGORIES,
};
