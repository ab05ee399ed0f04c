//! Iterative template extraction modeled as a Markov decision process, plus the
//! scoring stack used to evaluate it.
//!
//! The library has three layers:
//!
//! * data: [`corpus`] defines documents, ontologies, template instances and
//!   their JSON wire formats;
//! * model: [`embed`], [`policy`] and [`engine`] build span encodings, slot
//!   assignment policies (independent and joint heads) and the iterative
//!   decoder with span memory; [`learn`] trains the policies by imitation of a
//!   dynamic oracle on a reverse-mode [`tape`];
//! * evaluation: [`metrics`] implements the CEAF family (RME and both REE
//!   readings) over φ₃/φ₄/φ-subset and the granular combined score, backed by
//!   a Kuhn-Munkres aligner with an exhaustive oracle twin; [`synth`] generates
//!   deterministic synthetic corpora for tests and sweeps.

pub mod corpus;
pub mod embed;
pub mod engine;
pub mod learn;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod policy;
pub mod synth;
pub mod tape;

pub use corpus::{Corpus, Document, Filler, FillerPayload, Mention, Ontology, TemplateInstance};
pub use engine::{decode, DecodeStats, EpisodeState};
pub use learn::{grad_check, train, Beta, TrainConfig, TrainReport};
pub use metrics::{
    entity_score, granular_score, score_corpus, score_corpus_granular, Phi, Variant,
};
pub use model::{Head, Model};
