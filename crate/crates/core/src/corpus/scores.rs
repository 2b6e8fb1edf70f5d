use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: &str = "system\tsentence_index\tscore";

/// Externally computed per-candidate quality scores, keyed by system name and
/// sentence index.
///
/// TSV layout:
///
/// ```text
/// system	sentence_index	score
/// t5	0	0.913
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreFile {
    scores: BTreeMap<String, BTreeMap<usize, f64>>,
}

impl ScoreFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a score; a second score for the same pair is an error.
    pub fn insert(&mut self, system: &str, sentence: usize, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite score for `{system}`, sentence {sentence}"
            )));
        }
        let slot = self.scores.entry(system.to_owned()).or_default();
        if slot.insert(sentence, score).is_some() {
            return Err(Error::Validation(format!(
                "duplicate score for `{system}`, sentence {sentence}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, system: &str, sentence: usize) -> Result<f64> {
        self.scores
            .get(system)
            .and_then(|m| m.get(&sentence))
            .copied()
            .ok_or_else(|| Error::MissingScore {
                system: system.to_owned(),
                sentence,
            })
    }

    pub fn systems(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{}`", HEADER.replace('\t', "<TAB>")),
                })
            }
        }
        let mut file = ScoreFile::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [system, sentence, score] = fields[..] else {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            };
            let sentence: usize = sentence
                .parse()
                .map_err(|_| err(format!("bad sentence index `{sentence}`")))?;
            let score: f64 = score
                .parse()
                .map_err(|_| err(format!("bad score `{score}`")))?;
            file.insert(system, sentence, score)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (system, per_sentence) in &self.scores {
            for (idx, score) in per_sentence {
                let _ = writeln!(out, "{system}\t{idx}\t{score}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let f = ScoreFile::parse(
            "system\tsentence_index\tscore\nt5\t0\t0.5\nt5\t1\t-1e-3\nul2\t0\t2\n",
        )
        .unwrap();
        assert_eq!(f.get("t5", 1).unwrap(), -0.001);
        assert_eq!(f.get("ul2", 0).unwrap(), 2.0);
        assert!(matches!(f.get("ul2", 1), Err(Error::MissingScore { .. })));
        assert_eq!(ScoreFile::parse(&f.to_tsv()).unwrap(), f);
    }

    #[test]
    fn header_is_required() {
        assert!(ScoreFile::parse("t5\t0\t0.5\n").is_err());
    }

    #[test]
    fn duplicates_and_garbage_rejected() {
        let dup = "system\tsentence_index\tscore\nt5\t0\t0.5\nt5\t0\t0.7\n";
        assert!(matches!(
            ScoreFile::parse(dup),
            Err(Error::Parse { line: 3, .. })
        ));
        let bad = "system\tsentence_index\tscore\nt5\tzero\t0.5\n";
        assert!(ScoreFile::parse(bad).is_err());
        let nan = "system\tsentence_index\tscore\nt5\t0\tNaN\n";
        assert!(ScoreFile::parse(nan).is_err());
    }
}
