//! Token-level alignment between a source sentence and a hypothesis, and the
//! conversion to and from span edits.

use crate::corpus::{Edit, TokenSentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// One step of a token alignment. Spans are half-open; a match or
/// substitution covers one token on each side, an insertion covers one target
/// token only and a deletion one source token only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub source: (usize, usize),
    pub target: (usize, usize),
}

/// Minimum-cost token alignment (unit Levenshtein costs).
///
/// Traceback runs from the bottom-right cell and, among predecessors that
/// preserve optimality, prefers match, then substitute, then delete, then
/// insert.
pub fn align(source: &[String], target: &[String]) -> Vec<AlignmentOp> {
    let (n, m) = (source.len(), target.len());
    let width = m + 1;
    let mut dist = vec![0u32; (n + 1) * width];
    for j in 0..=m {
        dist[j] = j as u32;
    }
    for i in 1..=n {
        dist[i * width] = i as u32;
        for j in 1..=m {
            let diag = dist[(i - 1) * width + j - 1] + u32::from(source[i - 1] != target[j - 1]);
            let up = dist[(i - 1) * width + j] + 1;
            let left = dist[i * width + j - 1] + 1;
            dist[i * width + j] = diag.min(up).min(left);
        }
    }

    let at = |i: usize, j: usize| dist[i * width + j];
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = at(i, j);
        let kind = if i > 0 && j > 0 && source[i - 1] == target[j - 1] && at(i - 1, j - 1) == here {
            OpKind::Match
        } else if i > 0 && j > 0 && at(i - 1, j - 1) + 1 == here {
            OpKind::Substitute
        } else if i > 0 && at(i - 1, j) + 1 == here {
            OpKind::Delete
        } else {
            debug_assert!(j > 0 && at(i, j - 1) + 1 == here);
            OpKind::Insert
        };
        let (pi, pj) = match kind {
            OpKind::Match | OpKind::Substitute => (i - 1, j - 1),
            OpKind::Delete => (i - 1, j),
            OpKind::Insert => (i, j - 1),
        };
        ops.push(AlignmentOp {
            kind,
            source: (pi, i),
            target: (pj, j),
        });
        i = pi;
        j = pj;
    }
    ops.reverse();
    ops
}

/// Collapses maximal runs of non-match operations into span edits.
pub fn ops_to_edits(ops: &[AlignmentOp], target: &[String]) -> Vec<Edit> {
    let mut edits = Vec::new();
    let mut run: Option<((usize, usize), (usize, usize))> = None;
    for op in ops {
        if op.kind == OpKind::Match {
            if let Some((src, tgt)) = run.take() {
                edits.push(Edit {
                    start: src.0,
                    end: src.1,
                    replacement: target[tgt.0..tgt.1].to_vec(),
                });
            }
            continue;
        }
        run = Some(match run {
            None => (op.source, op.target),
            Some((src, tgt)) => ((src.0, op.source.1), (tgt.0, op.target.1)),
        });
    }
    if let Some((src, tgt)) = run {
        edits.push(Edit {
            start: src.0,
            end: src.1,
            replacement: target[tgt.0..tgt.1].to_vec(),
        });
    }
    edits
}

/// The minimal span edits turning `source` into `hypothesis`, sorted and
/// mutually non-overlapping. Identical sentences give no edits.
pub fn extract_edits(source: &TokenSentence, hypothesis: &TokenSentence) -> Vec<Edit> {
    if source == hypothesis {
        return Vec::new();
    }
    let ops = align(source.tokens(), hypothesis.tokens());
    ops_to_edits(&ops, hypothesis.tokens())
}

/// Conflict predicate for two edits over the same source.
///
/// Non-empty spans conflict when they intersect. An insertion at `i`
/// conflicts with another insertion at `i` and with any span `[s, e)` where
/// `s <= i < e`; it does not conflict with a span ending at `i`.
pub fn overlaps(a: &Edit, b: &Edit) -> bool {
    match (a.is_insertion(), b.is_insertion()) {
        (true, true) => a.start == b.start,
        (true, false) => b.start <= a.start && a.start < b.end,
        (false, true) => a.start <= b.start && b.start < a.end,
        (false, false) => a.start.max(b.start) < a.end.min(b.end),
    }
}

/// Applies mutually non-overlapping edits to `source`. The result does not
/// depend on the order of `edits`.
pub fn apply_edits(source: &TokenSentence, edits: &[Edit]) -> Result<TokenSentence> {
    let mut sorted: Vec<&Edit> = edits.iter().collect();
    sorted.sort();
    for e in &sorted {
        if e.start > e.end || e.end > source.len() {
            return Err(Error::Conflict(format!(
                "edit {e} out of bounds for a {}-token sentence",
                source.len()
            )));
        }
    }
    for (i, a) in sorted.iter().enumerate() {
        if let Some(b) = sorted[i + 1..].iter().find(|b| overlaps(a, b)) {
            return Err(Error::Conflict(format!("edits {a} and {b} overlap")));
        }
    }

    let tokens = source.tokens();
    let mut out = Vec::with_capacity(tokens.len() + 4);
    let mut cursor = 0;
    for e in sorted {
        out.extend_from_slice(&tokens[cursor..e.start]);
        out.extend(e.replacement.iter().cloned());
        cursor = e.end;
    }
    out.extend_from_slice(&tokens[cursor..]);
    Ok(TokenSentence::from_tokens_unchecked(out))
}
