use std::path::Path;

use super::{SystemOutput, TokenSentence};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Reads one tokenized sentence per line. Blank lines are rejected since a
/// sentence needs at least one token.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<TokenSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let sentence = TokenSentence::parse(line.strip_suffix('\r').unwrap_or(line));
            if sentence.is_empty() {
                Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: empty line", path.display()),
                })
            } else {
                Ok(sentence)
            }
        })
        .collect()
}

/// Loads a system output and checks it has exactly `expected_len` sentences.
/// The system name is the file stem.
pub fn load_parallel(path: impl AsRef<Path>, expected_len: usize) -> Result<SystemOutput> {
    let path = path.as_ref();
    let sentences = read_sentences(path)?;
    if sentences.len() != expected_len {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: expected_len,
            found: sentences.len(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(SystemOutput::new(name, sentences))
}

pub fn write_sentences(path: impl AsRef<Path>, sentences: &[TokenSentence]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
