use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Size,
    Pattern,
    Part,
}

pub const ATTRIBUTE_CATEGORIES: [Category; 3] = [Category::Color, Category::Size, Category::Pattern];

impl Category {
    /// Position of an attribute category inside a region's `attrs` list.
    pub fn slot(self) -> Option<usize> {
        match self {
            Category::Color => Some(0),
            Category::Size => Some(1),
            Category::Pattern => Some(2),
            Category::Part => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Size => "size",
            Category::Pattern => "pattern",
            Category::Part => "part",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Adj,
    Verb,
    Conj,
    Det,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexEntry {
    pub pos: Pos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    /// Canonical part index for nouns (aliases such as "bird" point at "body").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<usize>,
    /// Index into the attribute-vector space shared by phrases and regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(pub BTreeMap<String, LexEntry>);

impl Lexicon {
    pub fn get(&self, token: &str) -> Option<&LexEntry> {
        self.0.get(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub colors: usize,
    pub sizes: usize,
    pub patterns: usize,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        Self {
            colors: 8,
            sizes: 4,
            patterns: 4,
        }
    }
}

const PARTS: [&str; 8] = ["beak", "head", "belly", "eye", "wing", "feet", "neck", "body"];
const COLOR_POOL: [&str; 12] = [
    "red", "black", "yellow", "white", "blue", "brown", "grey", "orange", "green", "olive",
    "purple", "buff",
];
const SIZE_POOL: [&str; 6] = ["small", "large", "long", "short", "tiny", "big"];
const PATTERN_POOL: [&str; 8] = [
    "speckled", "striped", "spotted", "solid", "barred", "mottled", "flat", "glossy",
];
/// Alias nouns and the canonical part they denote.
const ALIASES: [(&str, &str); 5] = [
    ("bird", "body"),
    ("feathers", "body"),
    ("face", "head"),
    ("bill", "beak"),
    ("wings", "wing"),
];
const FUNCTION_WORDS: [(&str, Pos); 14] = [
    ("this", Pos::Det),
    ("a", Pos::Det),
    ("an", Pos::Det),
    ("the", Pos::Det),
    ("its", Pos::Det),
    ("is", Pos::Verb),
    ("are", Pos::Verb),
    ("has", Pos::Verb),
    ("have", Pos::Verb),
    ("and", Pos::Conj),
    ("or", Pos::Conj),
    ("with", Pos::Other),
    ("of", Pos::Other),
    ("on", Pos::Other),
];

const KAPPA_RANGE: (f64, f64) = (0.3, 3.0);

/// Closed vocabulary of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub parts: Vec<String>,
    /// Noun used for each part when realizing sentences ("bird" for the body).
    pub surface: Vec<String>,
    pub categories: BTreeMap<Category, Vec<String>>,
    pub lexicon: Lexicon,
    /// Raw grounding-score scale per part.
    pub kappa: Vec<f64>,
}

/// Builds the taxonomy: the first `n` tokens of each attribute pool, the
/// fixed part list with aliases, and per-part score scales drawn
/// log-uniformly from [0.3, 3.0].
pub fn build_taxonomy(config: &TaxonomyConfig, seed: u64) -> Result<Taxonomy> {
    let checks = [
        ("colors", config.colors, COLOR_POOL.len()),
        ("sizes", config.sizes, SIZE_POOL.len()),
        ("patterns", config.patterns, PATTERN_POOL.len()),
    ];
    for (name, count, max) in checks {
        if count < 2 {
            return Err(Error::Config(format!(
                "{name} count {count} < 2 leaves nothing to flip to"
            )));
        }
        if count > max {
            return Err(Error::Config(format!(
                "{name} count {count} exceeds the {max} available tokens"
            )));
        }
    }

    let take = |pool: &[&str], n: usize| pool[..n].iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut categories = BTreeMap::new();
    categories.insert(Category::Color, take(&COLOR_POOL, config.colors));
    categories.insert(Category::Size, take(&SIZE_POOL, config.sizes));
    categories.insert(Category::Pattern, take(&PATTERN_POOL, config.patterns));

    let parts: Vec<String> = PARTS.iter().map(|s| s.to_string()).collect();
    let surface: Vec<String> = parts
        .iter()
        .map(|p| if p == "body" { "bird".to_string() } else { p.clone() })
        .collect();

    let mut lexicon = BTreeMap::new();
    let mut feature = 0usize;
    for cat in ATTRIBUTE_CATEGORIES {
        for token in &categories[&cat] {
            lexicon.insert(
                token.clone(),
                LexEntry {
                    pos: Pos::Adj,
                    category: Some(cat),
                    part: None,
                    feature: Some(feature),
                },
            );
            feature += 1;
        }
    }
    let n_attr = feature;
    categories.insert(Category::Part, parts.clone());
    for (i, part) in parts.iter().enumerate() {
        lexicon.insert(part.clone(), noun_entry(i, n_attr));
    }
    for (alias, target) in ALIASES {
        let i = parts.iter().position(|p| p == target).expect("alias target is a part");
        lexicon.insert(alias.to_string(), noun_entry(i, n_attr));
    }
    for (word, pos) in FUNCTION_WORDS {
        lexicon.insert(
            word.to_string(),
            LexEntry {
                pos,
                category: None,
                part: None,
                feature: None,
            },
        );
    }

    let mut rng = rng::stream(seed, domain::TAXONOMY, 0);
    let (lo, hi) = (KAPPA_RANGE.0.ln(), KAPPA_RANGE.1.ln());
    let kappa = parts
        .iter()
        .map(|_| rng.random_range(lo..=hi).exp())
        .collect();

    Ok(Taxonomy {
        parts,
        surface,
        categories,
        lexicon: Lexicon(lexicon),
        kappa,
    })
}

fn noun_entry(part: usize, n_attr: usize) -> LexEntry {
    LexEntry {
        pos: Pos::Noun,
        category: Some(Category::Part),
        part: Some(part),
        feature: Some(n_attr + part),
    }
}

impl Taxonomy {
    pub fn tokens(&self, category: Category) -> &[String] {
        self.categories
            .get(&category)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn attribute_count(&self) -> usize {
        ATTRIBUTE_CATEGORIES
            .iter()
            .map(|c| self.tokens(*c).len())
            .sum()
    }

    /// Dimension of the attribute vector space (attribute tokens and parts).
    pub fn feature_dim(&self) -> usize {
        self.attribute_count() + self.parts.len()
    }

    pub fn part_index(&self, name: &str) -> Option<usize> {
        self.parts.iter().position(|p| p == name)
    }

    /// Canonical part denoted by a noun token, if any.
    pub fn noun_part(&self, token: &str) -> Option<usize> {
        self.lexicon.get(token).and_then(|e| e.part)
    }

    pub fn category_of(&self, token: &str) -> Option<Category> {
        self.lexicon.get(token).and_then(|e| e.category)
    }

    pub fn feature_of(&self, token: &str) -> Option<usize> {
        self.lexicon.get(token).and_then(|e| e.feature)
    }

    pub fn part_feature(&self, part: usize) -> usize {
        self.attribute_count() + part
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_echo_config() {
        let t = build_taxonomy(&TaxonomyConfig::default(), 3).unwrap();
        assert_eq!(t.attribute_count(), 16);
        assert_eq!(t.parts.len(), 8);
        assert_eq!(t.tokens(Category::Color).len(), 8);
        assert_eq!(t.feature_dim(), 24);
    }

    #[test]
    fn singleton_category_is_rejected() {
        let cfg = TaxonomyConfig {
            colors: 1,
            ..Default::default()
        };
        assert!(matches!(build_taxonomy(&cfg, 0), Err(Error::Config(_))));
        let cfg = TaxonomyConfig {
            patterns: 99,
            ..Default::default()
        };
        assert!(matches!(build_taxonomy(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = build_taxonomy(&TaxonomyConfig::default(), 11).unwrap();
        let b = build_taxonomy(&TaxonomyConfig::default(), 11).unwrap();
        let c = build_taxonomy(&TaxonomyConfig::default(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.kappa, c.kappa);
    }

    #[test]
    fn lexicon_invariants() {
        let t = build_taxonomy(&TaxonomyConfig::default(), 0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for cat in ATTRIBUTE_CATEGORIES {
            for tok in t.tokens(cat) {
                assert!(seen.insert(tok.clone()), "{tok} repeated across categories");
                assert_eq!(t.lexicon.get(tok).unwrap().pos, Pos::Adj);
            }
        }
        for part in &t.parts {
            assert_eq!(t.lexicon.get(part).unwrap().pos, Pos::Noun);
        }
        for w in ["is", "are", "with", "this", "a", "and", "bird"] {
            assert!(t.lexicon.get(w).is_some(), "{w} missing");
        }
        assert_eq!(t.noun_part("bird"), t.part_index("body"));
        for k in &t.kappa {
            assert!((0.3..=3.0).contains(k));
        }
    }
}
