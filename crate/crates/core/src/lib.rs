//! Number entity recognition with a small from-scratch transformer encoder:
//! synthetic corpora, tagging, entity-aware question answering and
//! fill-in-the-blank numeral prediction.

pub mod annotate;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod fitb;
pub mod model;
pub mod nn;
pub mod qa;
pub mod report;
pub mod tagger;
pub mod tokenizer;
pub mod train;

pub use corpus::{Corpus, EntityLabel, Sentence};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Task};
pub use tokenizer::Vocabulary;
