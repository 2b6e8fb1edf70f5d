//! Combining and evaluating grammatical error correction outputs.
//!
//! Edits are token spans extracted from parallel text. Systems are combined
//! by edit voting, gold-informed oracles, score-based ranking or a chat-model
//! ranker, and every result is scored with a multi-annotator F0.5 scorer.

pub mod alignment;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod io;
pub mod llm;
pub mod oracle;
pub mod ranking;
pub mod rng;
pub mod scoring;
pub mod voting;

pub use alignment::{apply_edits, extract_edits, overlaps};
pub use corpus::{Annotation, Edit, GoldSentence, ScoreFile, SystemOutput, TokenSentence};
pub use error::{Error, Result};
pub use scoring::{score_corpus, ScoreReport, SentenceCounts};
