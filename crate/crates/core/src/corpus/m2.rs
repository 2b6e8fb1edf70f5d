//! M2 gold-annotation format.
//!
//! ```text
//! S I likes turtles
//! A 1 2|||V|||like|||REQUIRED|||-NONE-|||0
//!
//! ```
//!
//! Edit types are read and dropped. `A -1 -1|||noop|||...` lines register an
//! explicit empty set for their annotator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Annotation, Edit, GoldSentence, TokenSentence};
use crate::error::{Error, Result};

const FIELD_SEP: &str = "|||";

pub fn parse_m2(input: &[u8]) -> Result<Vec<GoldSentence>> {
    let text = std::str::from_utf8(input).map_err(|e| Error::Parse {
        line: line_of_offset(input, e.valid_up_to()),
        message: "input is not valid UTF-8".into(),
    })?;

    let mut out = Vec::new();
    let mut stanza: Option<Stanza> = None;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(s) = stanza.take() {
                out.push(s.finish()?);
            }
            continue;
        }
        if let Some(rest) = strip_tag(line, 'S') {
            if let Some(s) = stanza.take() {
                out.push(s.finish()?);
            }
            stanza = Some(Stanza::new(line_no, TokenSentence::parse(rest)));
        } else if let Some(rest) = strip_tag(line, 'A') {
            let s = stanza.as_mut().ok_or_else(|| Error::Parse {
                line: line_no,
                message: "A-line outside of a stanza".into(),
            })?;
            s.push_annotation_line(line_no, rest)?;
        } else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected an `S` or `A` line, got `{}`", truncate(line)),
            });
        }
    }
    if let Some(s) = stanza.take() {
        out.push(s.finish()?);
    }
    Ok(out)
}

pub fn read_m2(path: impl AsRef<Path>) -> Result<Vec<GoldSentence>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_m2(&bytes).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn serialize_m2(sentences: &[GoldSentence]) -> Vec<u8> {
    let mut out = String::new();
    for gold in sentences {
        let _ = writeln!(out, "S {}", gold.source());
        for ann in gold.annotations() {
            if ann.edits.is_empty() {
                let _ = writeln!(
                    out,
                    "A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||{}",
                    ann.annotator
                );
            }
            for e in &ann.edits {
                let _ = writeln!(
                    out,
                    "A {} {}|||UNK|||{}|||REQUIRED|||-NONE-|||{}",
                    e.start,
                    e.end,
                    e.replacement.join(" "),
                    ann.annotator
                );
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

struct Stanza {
    line: usize,
    source: TokenSentence,
    sets: BTreeMap<usize, Vec<Edit>>,
}

impl Stanza {
    fn new(line: usize, source: TokenSentence) -> Self {
        Stanza {
            line,
            source,
            sets: BTreeMap::new(),
        }
    }

    fn push_annotation_line(&mut self, line: usize, rest: &str) -> Result<()> {
        let parse_err = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = rest.split(FIELD_SEP).collect();
        if fields.len() != 6 {
            return Err(parse_err(format!(
                "expected 6 `|||`-separated fields, found {}",
                fields.len()
            )));
        }
        let annotator: usize = fields[5]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad annotator id `{}`", fields[5].trim())))?;

        let mut span = fields[0].split_ascii_whitespace();
        let (start, end) = match (span.next(), span.next(), span.next()) {
            (Some(s), Some(e), None) => {
                let s: i64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad start `{s}`")))?;
                let e: i64 = e.parse().map_err(|_| parse_err(format!("bad end `{e}`")))?;
                (s, e)
            }
            _ => return Err(parse_err(format!("bad span `{}`", fields[0]))),
        };

        let set = self.sets.entry(annotator).or_default();
        if start == -1 && end == -1 {
            return Ok(());
        }
        if start < 0 || end < 0 {
            return Err(parse_err(format!("negative span ({start}, {end})")));
        }
        if start > end {
            return Err(Error::Validation(format!(
                "line {line}: span start {start} exceeds end {end}"
            )));
        }
        let edit = Edit {
            start: start as usize,
            end: end as usize,
            replacement: fields[2]
                .split_ascii_whitespace()
                .map(str::to_owned)
                .collect(),
        };
        edit.validate(&self.source)
            .map_err(|e| Error::Validation(format!("line {line}: {}", strip_prefix(e))))?;
        set.push(edit);
        Ok(())
    }

    fn finish(self) -> Result<GoldSentence> {
        let line = self.line;
        let annotations = if self.sets.is_empty() {
            vec![Annotation {
                annotator: 0,
                edits: Vec::new(),
            }]
        } else {
            self.sets
                .into_iter()
                .map(|(annotator, edits)| Annotation { annotator, edits })
                .collect()
        };
        GoldSentence::new(self.source, annotations)
            .map_err(|e| Error::Validation(format!("stanza at line {line}: {}", strip_prefix(e))))
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Validation(m) => m,
        other => other.to_string(),
    }
}

/// `S foo bar` -> `Some("foo bar")`; a bare `S` is an empty sentence.
fn strip_tag(line: &str, tag: char) -> Option<&str> {
    let rest = line.strip_prefix(tag)?;
    if rest.is_empty() {
        Some(rest)
    } else {
        rest.strip_prefix(' ')
    }
}

fn truncate(line: &str) -> String {
    line.chars().take(40).collect()
}

fn line_of_offset(bytes: &[u8], offset: usize) -> usize {
    bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1
}
