//! The phrase critic: an LSTM over grounded phrases with a two-layer tanh
//! head, trained with a margin ranking loss or a logistic loss.
//!
//! Each step input is the mean embedding of the phrase tokens, the matched
//! region's features and the raw grounding score, linearly projected. All
//! parameters live in one flat `f64` vector; gradients are computed by hand.

mod checkpoint;
mod input;
mod model;
mod train;

pub use checkpoint::{
    checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT,
};
pub use input::{
    dataset_grounder, ground_tokens, rank_examples, step_for, steps_for, train_ranker, vocab_for, SplitExamples,
};
pub use model::{
    binary_loss, probability, rank_loss, CriticModel, Example, Hyper, StepInput, Vocab, UNK,
};
pub use train::{accuracy, mean_score_accuracy, train, train_from, EpochLog, Objective, TrainReport};

#[cfg(test)]
mod tests;
