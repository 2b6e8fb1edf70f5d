//! Corpus data model and file formats.
//!
//! Everything in the toolkit indexes into pre-tokenized sentences: a
//! [`TokenSentence`] is split on ASCII whitespace and serialized by joining
//! with single spaces. Span [`Edit`]s are half-open token ranges over a source
//! sentence plus their replacement tokens.

mod m2;
mod parallel;
mod scores;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alignment::{apply_edits, overlaps};
use crate::error::{Error, Result};

pub use m2::{parse_m2, read_m2, serialize_m2};
pub use parallel::{load_parallel, read_sentences, write_sentences};
pub use scores::ScoreFile;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSentence {
    tokens: Vec<String>,
}

impl TokenSentence {
    /// Splits `text` on ASCII whitespace. Never fails; an all-blank string
    /// yields the empty sentence.
    pub fn parse(text: &str) -> Self {
        TokenSentence {
            tokens: text.split_ascii_whitespace().map(str::to_owned).collect(),
        }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (i, tok) in tokens.iter().enumerate() {
            check_token(tok).map_err(|m| Error::Validation(format!("token {i}: {m}")))?;
        }
        Ok(TokenSentence { tokens })
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        TokenSentence { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for TokenSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(tok)?;
        }
        Ok(())
    }
}

fn check_token(tok: &str) -> std::result::Result<(), &'static str> {
    if tok.is_empty() {
        Err("empty token")
    } else if tok.chars().any(char::is_whitespace) {
        Err("token contains whitespace")
    } else {
        Ok(())
    }
}

/// Rewrites source tokens `[start, end)` to `replacement`.
///
/// `start == end` is a pure insertion; an empty replacement over a non-empty
/// span is a deletion. The derived ordering is `(start, end, replacement)`,
/// which is the canonical ordering used for tie-breaking everywhere.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
}

impl Edit {
    pub fn new<I, S>(start: usize, end: usize, replacement: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Edit {
            start,
            end,
            replacement: replacement.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    pub fn is_deletion(&self) -> bool {
        self.end > self.start && self.replacement.is_empty()
    }

    /// Checks bounds, token well-formedness and that the edit actually
    /// changes `source`.
    pub fn validate(&self, source: &TokenSentence) -> Result<()> {
        if self.start > self.end || self.end > source.len() {
            return Err(Error::Validation(format!(
                "edit span ({}, {}) out of bounds for a {}-token sentence",
                self.start,
                self.end,
                source.len()
            )));
        }
        for tok in &self.replacement {
            check_token(tok).map_err(|m| Error::Validation(format!("edit replacement: {m}")))?;
        }
        if source.tokens()[self.start..self.end] == self.replacement[..] {
            return Err(Error::Validation(format!(
                "edit ({}, {}) does not change the source",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, [{}])",
            self.start,
            self.end,
            self.replacement.join(" ")
        )
    }
}

/// One annotator's edit set for a sentence, sorted by `(start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: usize,
    pub edits: Vec<Edit>,
}

/// A source sentence with its gold annotations (one M2 stanza).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSentence {
    source: TokenSentence,
    annotations: Vec<Annotation>,
}

impl GoldSentence {
    /// Validates and normalizes: annotations are ordered by annotator id and
    /// each annotator's edits by `(start, end)`.
    pub fn new(source: TokenSentence, mut annotations: Vec<Annotation>) -> Result<Self> {
        if annotations.is_empty() {
            return Err(Error::Validation(
                "a gold sentence needs at least one annotation set".into(),
            ));
        }
        annotations.sort_by_key(|a| a.annotator);
        for pair in annotations.windows(2) {
            if pair[0].annotator == pair[1].annotator {
                return Err(Error::Validation(format!(
                    "annotator {} appears twice",
                    pair[0].annotator
                )));
            }
        }
        for ann in &mut annotations {
            ann.edits.sort();
            for edit in &ann.edits {
                edit.validate(&source)?;
            }
            for (i, a) in ann.edits.iter().enumerate() {
                for b in &ann.edits[i + 1..] {
                    if overlaps(a, b) {
                        return Err(Error::Validation(format!(
                            "annotator {}: edits {a} and {b} overlap",
                            ann.annotator
                        )));
                    }
                }
            }
        }
        Ok(GoldSentence {
            source,
            annotations,
        })
    }

    /// A gold sentence with a single annotator (id 0) holding `edits`.
    pub fn single(source: TokenSentence, edits: Vec<Edit>) -> Result<Self> {
        GoldSentence::new(
            source,
            vec![Annotation {
                annotator: 0,
                edits,
            }],
        )
    }

    pub fn source(&self) -> &TokenSentence {
        &self.source
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// The source with annotation `index` (position, not annotator id) applied.
    pub fn corrected(&self, index: usize) -> TokenSentence {
        apply_edits(&self.source, &self.annotations[index].edits)
            .expect("gold annotations are validated on construction")
    }
}

/// One system's corrected corpus, index-aligned with the sources.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub name: String,
    pub sentences: Vec<TokenSentence>,
}

impl SystemOutput {
    pub fn new(name: impl Into<String>, sentences: Vec<TokenSentence>) -> Self {
        SystemOutput {
            name: name.into(),
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Errors unless this output has exactly `expected` sentences.
    pub fn check_aligned(&self, expected: usize) -> Result<()> {
        if self.sentences.len() != expected {
            return Err(Error::LengthMismatch {
                path: self.name.clone().into(),
                expected,
                found: self.sentences.len(),
            });
        }
        Ok(())
    }
}

/// The `(name, sentence)` candidate list for sentence `index` across systems.
pub fn candidates_at(outputs: &[SystemOutput], index: usize) -> Vec<(&str, &TokenSentence)> {
    outputs
        .iter()
        .map(|o| (o.name.as_str(), &o.sentences[index]))
        .collect()
}

pub(crate) fn check_all_aligned(outputs: &[SystemOutput], expected: usize) -> Result<()> {
    outputs.iter().try_for_each(|o| o.check_aligned(expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str) -> TokenSentence {
        TokenSentence::parse(s)
    }

    #[test]
    fn token_sentence_join_split() {
        let s = sent("  I like\tturtles  very much . ");
        assert_eq!(s.len(), 6);
        assert_eq!(s.to_string(), "I like turtles very much .");
        assert_eq!(sent(&s.to_string()), s);
        assert!(sent("").is_empty());
    }

    #[test]
    fn from_tokens_rejects_bad_tokens() {
        assert!(TokenSentence::from_tokens(["a", ""]).is_err());
        assert!(TokenSentence::from_tokens(["a b"]).is_err());
        assert!(TokenSentence::from_tokens(["a", "b"]).is_ok());
    }

    #[test]
    fn edit_validation() {
        let src = sent("I likes turtles");
        assert!(Edit::new(1, 2, ["like"]).validate(&src).is_ok());
        assert!(Edit::new(3, 3, ["."]).validate(&src).is_ok());
        assert!(Edit::new(2, 4, ["x"]).validate(&src).is_err());
        // no-op
        assert!(Edit::new(1, 2, ["likes"]).validate(&src).is_err());
        assert!(Edit::new(1, 1, Vec::<String>::new())
            .validate(&src)
            .is_err());
    }

    #[test]
    fn gold_sentence_rejects_overlap_within_annotator() {
        let src = sent("a b c");
        let err = GoldSentence::single(
            src.clone(),
            vec![Edit::new(0, 2, ["x"]), Edit::new(1, 3, ["y"])],
        );
        assert!(matches!(err, Err(Error::Validation(_))));

        let ok = GoldSentence::new(
            src,
            vec![
                Annotation {
                    annotator: 1,
                    edits: vec![Edit::new(1, 3, ["y"])],
                },
                Annotation {
                    annotator: 0,
                    edits: vec![Edit::new(0, 2, ["x"])],
                },
            ],
        )
        .unwrap();
        assert_eq!(ok.annotations()[0].annotator, 0);
        assert_eq!(ok.corrected(1).to_string(), "a y");
    }

    #[test]
    fn gold_sentence_needs_an_annotation() {
        assert!(GoldSentence::new(sent("a"), vec![]).is_err());
    }
}
