//! Tokenizer, lexicon tagger and the rule-based attribute-phrase chunker.
//!
//! Two patterns are recognized, scanning left to right and never overlapping:
//!
//! - `NOUN VERB ADJ (CONJ? ADJ)*`, e.g. "feathers are speckled", normalized
//!   to the adjective-noun shape `(speckled; feathers)`;
//! - `ADJ (CONJ? ADJ)* NOUN`, e.g. "red and orange head".

use serde::{Deserialize, Serialize};

use crate::worldsim::{Category, Lexicon, Pos};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub text: String,
    pub pos: Pos,
    pub category: Option<Category>,
}

/// An adjective list attached to one head noun.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributePhrase {
    pub adjectives: Vec<String>,
    pub noun: String,
    /// Category of each adjective, parallel to `adjectives`.
    pub categories: Vec<Category>,
    /// Half-open token range `[start, end)` in the source sentence.
    pub span: (usize, usize),
    pub adjective_positions: Vec<usize>,
    pub noun_position: usize,
}

impl AttributePhrase {
    /// Builds a phrase without a source sentence; positions follow
    /// `phrase_to_text` order.
    pub fn new(adjectives: Vec<String>, noun: impl Into<String>, lexicon: &Lexicon) -> Self {
        let n = adjectives.len();
        let categories = adjectives
            .iter()
            .map(|a| {
                lexicon
                    .get(a)
                    .and_then(|e| e.category)
                    .unwrap_or(Category::Color)
            })
            .collect();
        Self {
            adjectives,
            noun: noun.into(),
            categories,
            span: (0, n + 1),
            adjective_positions: (0..n).collect(),
            noun_position: n,
        }
    }

    /// Content key ignoring where the phrase came from.
    pub fn key(&self) -> (&[String], &str) {
        (&self.adjectives, &self.noun)
    }

    pub fn text(&self) -> String {
        phrase_to_text(self)
    }
}

/// Lowercases and splits on anything that is not alphanumeric; punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn pos_tag<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<TaggedToken> {
    tokens
        .iter()
        .map(|t| {
            let text = t.as_ref();
            match lexicon.get(text) {
                Some(e) => TaggedToken {
                    text: text.to_string(),
                    pos: e.pos,
                    category: e.category,
                },
                None => TaggedToken {
                    text: text.to_string(),
                    pos: Pos::Other,
                    category: None,
                },
            }
        })
        .collect()
}

/// Extends an adjective list starting at `start` (an ADJ). Returns the
/// adjective positions; the list ends at the last adjective.
fn adjective_run(tagged: &[TaggedToken], start: usize) -> Vec<usize> {
    let pos = |i: usize| tagged.get(i).map(|t| t.pos);
    let mut run = vec![start];
    let mut j = start;
    loop {
        if pos(j + 1) == Some(Pos::Adj) {
            j += 1;
        } else if pos(j + 1) == Some(Pos::Conj) && pos(j + 2) == Some(Pos::Adj) {
            j += 2;
        } else {
            break;
        }
        run.push(j);
    }
    run
}

fn build(
    tagged: &[TaggedToken],
    adjectives: &[usize],
    noun: usize,
    span: (usize, usize),
) -> AttributePhrase {
    AttributePhrase {
        adjectives: adjectives.iter().map(|&i| tagged[i].text.clone()).collect(),
        noun: tagged[noun].text.clone(),
        categories: adjectives
            .iter()
            .map(|&i| tagged[i].category.unwrap_or(Category::Color))
            .collect(),
        span,
        adjective_positions: adjectives.to_vec(),
        noun_position: noun,
    }
}

fn match_at(tagged: &[TaggedToken], i: usize) -> Option<AttributePhrase> {
    let pos = |k: usize| tagged.get(k).map(|t| t.pos);
    match tagged[i].pos {
        Pos::Adj => {
            let run = adjective_run(tagged, i);
            let last = *run.last().unwrap();
            (pos(last + 1) == Some(Pos::Noun)).then(|| build(tagged, &run, last + 1, (i, last + 2)))
        }
        Pos::Noun if pos(i + 1) == Some(Pos::Verb) && pos(i + 2) == Some(Pos::Adj) => {
            let run = adjective_run(tagged, i + 2);
            let last = *run.last().unwrap();
            // "bird has red feathers": the adjectives belong to the following noun.
            if pos(last + 1) == Some(Pos::Noun) {
                return None;
            }
            Some(build(tagged, &run, i, (i, last + 1)))
        }
        _ => None,
    }
}

pub fn chunk_attribute_phrases(tagged: &[TaggedToken]) -> Vec<AttributePhrase> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tagged.len() {
        match match_at(tagged, i) {
            Some(p) => {
                i = p.span.1;
                out.push(p);
            }
            None => i += 1,
        }
    }
    out
}

/// Tag-and-chunk convenience over a token list.
pub fn chunk_tokens<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<AttributePhrase> {
    chunk_attribute_phrases(&pos_tag(tokens, lexicon))
}

/// Adjectives joined with spaces, then the noun.
pub fn phrase_to_text(phrase: &AttributePhrase) -> String {
    let mut parts: Vec<&str> = phrase.adjectives.iter().map(String::as_str).collect();
    parts.push(&phrase.noun);
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{build_taxonomy, TaxonomyConfig};
    use proptest::prelude::*;

    fn lexicon() -> Lexicon {
        build_taxonomy(&TaxonomyConfig::default(), 0).unwrap().lexicon
    }

    fn keys(text: &str) -> Vec<(Vec<String>, String)> {
        chunk_tokens(&tokenize(text), &lexicon())
            .into_iter()
            .map(|p| (p.adjectives, p.noun))
            .collect()
    }

    fn key(adjs: &[&str], noun: &str) -> (Vec<String>, String) {
        (adjs.iter().map(|s| s.to_string()).collect(), noun.to_string())
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("This is a Red bird."), ["this", "is", "a", "red", "bird"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("red,  beak"), ["red", "beak"]);
    }

    #[test]
    fn tagger_examples() {
        let lex = lexicon();
        let t = pos_tag(&["red", "beak"], &lex);
        assert_eq!((t[0].pos, t[0].category), (Pos::Adj, Some(Category::Color)));
        assert_eq!((t[1].pos, t[1].category), (Pos::Noun, Some(Category::Part)));
        let t = pos_tag(&["feathers", "are", "speckled"], &lex);
        assert_eq!(
            t.iter().map(|x| x.pos).collect::<Vec<_>>(),
            [Pos::Noun, Pos::Verb, Pos::Adj]
        );
        assert_eq!(t[2].category, Some(Category::Pattern));
        assert_eq!(pos_tag(&["qwerty"], &lex)[0].pos, Pos::Other);
    }

    #[test]
    fn chunker_examples() {
        assert_eq!(
            keys("this red bird has a red beak and a black face"),
            [key(&["red"], "bird"), key(&["red"], "beak"), key(&["black"], "face")]
        );
        assert_eq!(keys("feathers are speckled"), [key(&["speckled"], "feathers")]);
        assert!(keys("this is a bird").is_empty());
        assert_eq!(keys("red and orange head"), [key(&["red", "orange"], "head")]);
        assert_eq!(keys("bird is black"), [key(&["black"], "bird")]);
    }

    #[test]
    fn predicate_yields_to_following_noun() {
        assert_eq!(keys("this bird has red feathers"), [key(&["red"], "feathers")]);
        assert_eq!(
            keys("a red bird with a small beak and its neck is long"),
            [key(&["red"], "bird"), key(&["small"], "beak"), key(&["long"], "neck")]
        );
    }

    #[test]
    fn spans_and_positions() {
        let lex = lexicon();
        let tokens = tokenize("this is a red and orange head and its neck is long");
        let phrases = chunk_tokens(&tokens, &lex);
        assert_eq!(phrases[0].span, (3, 7));
        assert_eq!(phrases[0].adjective_positions, [3, 5]);
        assert_eq!(phrases[0].noun_position, 6);
        assert_eq!(phrases[1].span, (9, 12));
        assert_eq!(phrases[1].noun_position, 9);
        for p in &phrases {
            let sub = chunk_tokens(&tokens[p.span.0..p.span.1], &lex);
            assert_eq!(sub.len(), 1);
            assert_eq!(sub[0].key(), p.key());
        }
    }

    #[test]
    fn phrase_text() {
        let lex = lexicon();
        let p = AttributePhrase::new(vec!["red".into()], "beak", &lex);
        assert_eq!(phrase_to_text(&p), "red beak");
        let p = AttributePhrase::new(vec!["speckled".into()], "feathers", &lex);
        assert_eq!(phrase_to_text(&p), "speckled feathers");
        let p = AttributePhrase::new(vec!["red".into(), "orange".into()], "head", &lex);
        assert_eq!(phrase_to_text(&p), "red orange head");
    }

    fn phrase_strategy() -> impl Strategy<Value = Vec<(Vec<String>, String)>> {
        let lex = lexicon();
        let adjs: Vec<String> = lex
            .0
            .iter()
            .filter(|(_, e)| e.pos == Pos::Adj)
            .map(|(k, _)| k.clone())
            .collect();
        let nouns: Vec<String> = lex
            .0
            .iter()
            .filter(|(_, e)| e.pos == Pos::Noun)
            .map(|(k, _)| k.clone())
            .collect();
        let one = (
            prop::collection::vec(prop::sample::select(adjs), 1..4),
            prop::sample::select(nouns),
        );
        prop::collection::vec(one, 0..6)
    }

    proptest! {
        #[test]
        fn chunking_phrase_texts_is_idempotent(phrases in phrase_strategy()) {
            let lex = lexicon();
            let built: Vec<AttributePhrase> = phrases
                .iter()
                .map(|(a, n)| AttributePhrase::new(a.clone(), n.clone(), &lex))
                .collect();
            for p in &built {
                let again = chunk_tokens(&tokenize(&phrase_to_text(p)), &lex);
                prop_assert_eq!(again.len(), 1);
                prop_assert_eq!(again[0].key(), p.key());
            }
            let joined: Vec<String> = built.iter().map(phrase_to_text).collect();
            let again = chunk_tokens(&tokenize(&joined.join(" ")), &lex);
            prop_assert_eq!(again.len(), built.len());
            for (a, b) in again.iter().zip(&built) {
                prop_assert_eq!(a.key(), b.key());
            }
            // order preservation and non-overlap
            for w in again.windows(2) {
                prop_assert!(w[0].span.1 <= w[1].span.0);
            }
        }

        #[test]
        fn chunking_is_deterministic_and_spans_recover(words in prop::collection::vec(
            prop::sample::select(vec!["red", "black", "small", "beak", "head", "is", "are",
                "and", "a", "with", "bird", "speckled", "qwerty", "its"]), 0..16)) {
            let lex = lexicon();
            let a = chunk_tokens(&words, &lex);
            prop_assert_eq!(&a, &chunk_tokens(&words, &lex));
            for p in &a {
                prop_assert!(!p.adjectives.is_empty());
                let sub = chunk_tokens(&words[p.span.0..p.span.1], &lex);
                prop_assert_eq!(sub.len(), 1);
                prop_assert_eq!(sub[0].key(), p.key());
            }
        }
    }
}
