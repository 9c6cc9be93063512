//! Guided abstractive summarization with a post-editing corrector.
//!
//! The pipeline: clean a terminology list into a [`lexicon::Lexicon`], pull
//! term or sentence guidance out of each document, train a dual-encoder
//! summarizer whose decoder attends to guidance before the document, corrupt
//! reference summaries to train a corrector and a consistency classifier, and
//! score the results with ROUGE and mean consistency probability.

pub mod architecture;
pub mod corpus;
pub mod corruption;
pub mod decoding;
mod error;
pub mod evaluation;
pub mod guidance;
pub mod jsonl;
pub mod lexicon;
pub mod training;

pub use error::{Error, Result};
