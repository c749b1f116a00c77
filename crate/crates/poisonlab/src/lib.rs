//! poisonlab: a desk-scale laboratory for studying data-poisoning
//! attacks on in-context learning.
//!
//! The lab perturbs demonstration examples so that a surrogate model's
//! per-layer hidden states move as far as possible from their clean
//! values, then measures how much those poisoned demonstrations degrade
//! in-context-learning accuracy, across poisoning rates, attack budgets,
//! model transfer, and two defenses.
//!
//! See the `book/` directory for a guided tour; its code samples double
//! as doc-tests.

pub mod attack;
pub mod dataset;
pub mod cli;
pub mod defense;
pub mod distortion;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod harness;
pub mod model;
pub mod tensor;
pub mod template;
pub mod text;

pub(crate) mod math;

pub use error::{Error, Result};
