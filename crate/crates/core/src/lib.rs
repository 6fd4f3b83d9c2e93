//! Zero-shot entity linking against a scholarly knowledge graph.
//!
//! Mentions are extracted by a language model, matched against a label
//! index, and re-ranked by how plausible each candidate's neighborhood
//! facts look to the same model.

pub mod entity;
pub mod eval;
pub mod index;
pub mod kg;
pub mod llm;
pub mod mention;
pub mod pipeline;
pub mod scoring;

pub use entity::{KgType, MentionType};
pub use pipeline::{LinkMode, Linker, LinkingResult, Pipeline, PipelineSettings};
