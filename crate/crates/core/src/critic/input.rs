use rayon::prelude::*;

use super::model::{CriticModel, Example, Hyper, StepInput, Vocab};
use super::train::{train, EpochLog, TrainReport};
use crate::grounding::{GroundedPhrase, Grounder, RetrievalGrounder};
use crate::negatives::{build_rank_pairs, RankPair};
use crate::textproc;
use crate::worldsim::{Dataset, Scene, Split, Taxonomy};
use crate::Result;

/// Vocabulary of every lexicon token.
pub fn vocab_for(taxonomy: &Taxonomy) -> Vocab {
    Vocab::new(taxonomy.lexicon.tokens())
}

pub fn step_for(grounded: &GroundedPhrase, vocab: &Vocab) -> StepInput {
    let p = &grounded.phrase;
    StepInput {
        tokens: p
            .adjectives
            .iter()
            .chain(std::iter::once(&p.noun))
            .map(|t| vocab.id(t))
            .collect(),
        features: grounded.features.clone(),
        score: grounded.score,
    }
}

pub fn steps_for(grounded: &[GroundedPhrase], vocab: &Vocab) -> Vec<StepInput> {
    grounded.iter().map(|g| step_for(g, vocab)).collect()
}

/// Chunks and grounds a token sequence in `scene`, in sentence order.
pub fn ground_tokens<S: AsRef<str>>(
    tokens: &[S],
    scene: &Scene,
    taxonomy: &Taxonomy,
    grounder: &impl Grounder,
) -> Result<Vec<GroundedPhrase>> {
    let phrases = textproc::chunk_tokens(tokens, &taxonomy.lexicon);
    grounder.ground_all(&phrases, scene)
}

/// The dataset's configured grounder.
pub fn dataset_grounder(dataset: &Dataset) -> RetrievalGrounder<'_> {
    RetrievalGrounder::new(&dataset.taxonomy, dataset.config.grounder)
}

/// Grounds both sides of every pair; pairs keep their order.
pub fn rank_examples(dataset: &Dataset, pairs: &[RankPair], vocab: &Vocab) -> Result<Vec<(Split, Example)>> {
    let grounder = dataset_grounder(dataset);
    pairs
        .par_iter()
        .map(|p| {
            let scene = dataset.scene(p.scene_id).expect("pair scene exists");
            let pos = ground_tokens(&p.positive, scene, &dataset.taxonomy, &grounder)?;
            let neg = ground_tokens(&p.negative, scene, &dataset.taxonomy, &grounder)?;
            Ok((
                p.split,
                Example::Pair {
                    positive: steps_for(&pos, vocab),
                    negative: steps_for(&neg, vocab),
                },
            ))
        })
        .collect()
}

/// Grounded examples partitioned by split, each in input order.
#[derive(Clone, Debug, Default)]
pub struct SplitExamples {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl SplitExamples {
    pub fn from_tagged(tagged: Vec<(Split, Example)>) -> Self {
        let mut out = Self::default();
        for (split, e) in tagged {
            match split {
                Split::Train => out.train.push(e),
                Split::Val => out.val.push(e),
                Split::Test => out.test.push(e),
            }
        }
        out
    }
}

/// Builds `per_scene` x `k` flipped-negative pairs per scene and trains the
/// critic with the rank loss on the train split.
pub fn train_ranker(
    dataset: &Dataset,
    hyper: Hyper,
    per_scene: usize,
    k: usize,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(CriticModel, TrainReport, SplitExamples)> {
    let vocab = vocab_for(&dataset.taxonomy);
    let pairs = build_rank_pairs(dataset, per_scene, k, seed)?;
    let examples = SplitExamples::from_tagged(rank_examples(dataset, &pairs, &vocab)?);
    let (model, report) = train(
        hyper,
        vocab,
        dataset.taxonomy.feature_dim() + 4,
        &examples.train,
        &examples.val,
        seed,
        on_epoch,
    )?;
    Ok((model, report, examples))
}
