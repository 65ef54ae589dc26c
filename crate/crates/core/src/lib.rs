//! Grounded explanation ranking.
//!
//! A desk-scale pipeline that samples candidate textual explanations for
//! synthetic scenes, chunks them into attribute phrases, grounds each phrase
//! to a scene region, and ranks the candidates with a small trainable
//! recurrent critic. The same critic drives counterfactual explanations and
//! the three foil-word tasks (classification, detection, correction).
//!
//! Module map:
//!
//! - [`worldsim`]: taxonomy, class profiles, scenes, sentences, datasets.
//! - [`textproc`]: tokenizer, lexicon tagger, attribute-phrase chunker.
//! - [`grounding`]: retrieval grounder with per-part raw score scales.
//! - [`generation`]: bigram fluency model and candidate sampler.
//! - [`negatives`]: within-category attribute flipping for hard negatives.
//! - [`critic`]: recurrent critic, losses, manual gradients, training, checkpoints.
//! - [`explain`]: fluency-gated selection and counterfactual explanations.
//! - [`foil`]: foil classification, detection, correction and the grounding baseline.
//! - [`metrics`]: keypoint metrics, CNP/CS, selector comparison.
//! - [`cli`]: the `phrase-critic` command line.

pub mod cli;
pub mod critic;
pub mod error;
pub mod explain;
pub mod foil;
pub mod generation;
pub mod grounding;
pub mod metrics;
pub mod negatives;
pub mod rng;
pub mod svg;
pub mod textproc;
pub mod worldsim;

pub use error::{Error, Result};
