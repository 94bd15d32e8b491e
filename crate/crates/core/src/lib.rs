//! Multilingual entity linking toolkit.
//!
//! The pipeline runs in stages over same-language knowledge bases:
//!
//! 1. [`kb`] loads entities, computes cross-link popularity and anchor statistics,
//!    and builds a token-level name index.
//! 2. [`triage`] proposes a small candidate set per mention from anchor priors.
//! 3. [`encoder`] turns a mention–entity pair into four pooled subword representations.
//! 4. [`ranker`] scores pairs with a pointwise neural ranker trained by max-margin
//!    hinge loss; [`adversarial`] adds a language classifier that pushes the
//!    string representations toward language invariance.
//! 5. [`eval`] thresholds scores into NIL decisions and computes linking metrics.
//!
//! Batch work (encoding, per-example gradients, prediction) goes through
//! [`parallel`], which uses rayon when the `parallel` feature is enabled and
//! falls back to sequential iteration otherwise. Results are identical in
//! both modes.

pub mod adversarial;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kb;
pub mod parallel;
pub mod pipeline;
pub mod ranker;
pub mod rng;
pub mod synthetic;
pub mod triage;

pub use error::{Error, Result};

/// Distinguished gold/prediction label for mentions without a KB entry.
pub const NIL: &str = "NIL";
