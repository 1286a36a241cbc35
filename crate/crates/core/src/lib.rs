//! Core algorithms for grammar-aware holistic essay scoring.
//!
//! Everything here is pure computation over in-memory values and builds
//! without the standard library (an allocator is required). File formats,
//! hashing and the command-line front end live in the `aesg` crate.
//!
//! The pipeline runs in this order:
//!
//! 1. [`corpus`]: score scales, tokenization and fold splits.
//! 2. [`grammar`]: a token-level pattern DSL that counts grammatical items
//!    and binarizes the counts into positive-feature vectors.
//! 3. [`errors`]: M2 annotation parsing and per-100-word error rates.
//! 4. [`irt`]: two-parameter logistic calibration (MML-EM) and EAP abilities.
//! 5. [`weighting`]: difficulty- and probability-based feature transforms.
//! 6. [`scorer`]: feed-forward multi-task scoring networks trained with Adam.
//! 7. [`eval`]: quadratic weighted kappa, confusion matrices, cross-validation.
#![no_std]
// NaN-rejecting guards such as `!(x > 0.0)` are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod errors;
pub mod eval;
pub mod grammar;
pub mod irt;
mod math;
pub mod scorer;
pub mod weighting;

pub use corpus::{denormalize_prediction, normalize_score, Essay, FoldAssignment, ScoreScale};
pub use errors::{extract_nf, parse_m2, ErrorTagVocabulary, NfVector};
pub use eval::{confusion_matrix, cross_validate, qwk, ConfusionMatrix, EvaluationReport};
pub use grammar::{binarize, Catalog, GrammarPattern, Lexicon, PfVector};
pub use irt::{
    estimate_ability, fit_2pl, irf, AbilityEstimate, IrtConfig, ItemParameters, ResponseMatrix,
};
pub use scorer::{Architecture, ModelDims, ScoringModel, TrainConfig};
pub use weighting::{apply_transform, TransformMode, TransformSpec};
