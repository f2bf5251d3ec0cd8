//! Chinese lexical simplification: pluggable substitution generation, a
//! four-feature rank-aggregation ranker, the end-to-end simplification
//! pipeline, and an evaluation harness with error categorization.

pub mod dataset;
pub mod lexicons;
pub mod generation;
pub mod mlm;
pub mod pipeline;
pub mod ranking;

pub use dataset::{Dataset, Instance, Word};
pub use lexicons::LexiconBundle;
pub use mlm::{MlmBackend, MockBackend};
