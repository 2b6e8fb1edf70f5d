//! Majority-vote ensembling over span edits.
//!
//! Every member output is converted to edits against the shared source, edits
//! are pooled by exact identity, those proposed by more than `n_min` systems
//! survive, and survivors are applied from most to least agreed-upon while
//! skipping anything that conflicts with an edit already applied.
//!
//! Ensembles of ensembles use the same functions with ensemble outputs as the
//! members.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{apply_edits, extract_edits, overlaps};
use crate::corpus::{candidates_at, check_all_aligned, Edit, SystemOutput, TokenSentence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VotedEdit {
    pub edit: Edit,
    pub votes: usize,
    /// Proposing systems, sorted by name. Its length equals `votes`.
    pub systems: Vec<String>,
}

/// Pools the edits of every output, one entry per distinct edit, ordered by
/// edit.
pub fn pool_edits(source: &TokenSentence, outputs: &[(&str, &TokenSentence)]) -> Vec<VotedEdit> {
    let mut pool: BTreeMap<Edit, Vec<String>> = BTreeMap::new();
    for (name, hyp) in outputs {
        for edit in extract_edits(source, hyp) {
            pool.entry(edit).or_default().push((*name).to_owned());
        }
    }
    pool.into_iter()
        .map(|(edit, mut systems)| {
            systems.sort();
            VotedEdit {
                edit,
                votes: systems.len(),
                systems,
            }
        })
        .collect()
}

/// Keeps edits with strictly more than `n_min` votes.
pub fn filter_by_votes(pool: &[VotedEdit], n_min: usize) -> Vec<VotedEdit> {
    pool.iter().filter(|v| v.votes > n_min).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VoteOutcome {
    pub sentence: TokenSentence,
    /// Applied edits, in application order.
    pub applied: Vec<VotedEdit>,
    /// Edits that passed the threshold but conflicted with an applied edit.
    pub skipped: Vec<VotedEdit>,
}

/// Full majority-vote decision for one sentence.
pub fn vote_sentence(
    source: &TokenSentence,
    outputs: &[(&str, &TokenSentence)],
    n_min: usize,
) -> VoteOutcome {
    let mut survivors = filter_by_votes(&pool_edits(source, outputs), n_min);
    // Vote ties fall back to edit order: start, end, replacement.
    survivors.sort_by(|a, b| (Reverse(a.votes), &a.edit).cmp(&(Reverse(b.votes), &b.edit)));

    let mut applied: Vec<VotedEdit> = Vec::new();
    let mut skipped = Vec::new();
    for cand in survivors {
        if applied.iter().any(|a| overlaps(&a.edit, &cand.edit)) {
            skipped.push(cand);
        } else {
            applied.push(cand);
        }
    }
    let edits: Vec<Edit> = applied.iter().map(|v| v.edit.clone()).collect();
    let sentence = apply_edits(source, &edits).expect("applied edits are pairwise disjoint");
    VoteOutcome {
        sentence,
        applied,
        skipped,
    }
}

pub fn majority_vote(
    source: &TokenSentence,
    outputs: &[(&str, &TokenSentence)],
    n_min: usize,
) -> TokenSentence {
    vote_sentence(source, outputs, n_min).sentence
}

/// `majority-vote(a+b+c;n_min=1)`
pub fn ensemble_name(outputs: &[SystemOutput], n_min: usize) -> String {
    let members: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
    format!("majority-vote({};n_min={n_min})", members.join("+"))
}

/// Sentence-by-sentence majority vote over aligned member outputs.
pub fn majority_vote_corpus(
    sources: &[TokenSentence],
    outputs: &[SystemOutput],
    n_min: usize,
) -> Result<SystemOutput> {
    let (output, _) = majority_vote_corpus_detailed(sources, outputs, n_min)?;
    Ok(output)
}

/// Like [`majority_vote_corpus`], also returning every per-sentence decision.
pub fn majority_vote_corpus_detailed(
    sources: &[TokenSentence],
    outputs: &[SystemOutput],
    n_min: usize,
) -> Result<(SystemOutput, Vec<VoteOutcome>)> {
    if outputs.is_empty() {
        return Err(Error::Validation(
            "majority vote needs at least one system".into(),
        ));
    }
    if n_min > outputs.len() {
        return Err(Error::Validation(format!(
            "n_min = {n_min} exceeds the number of systems ({})",
            outputs.len()
        )));
    }
    check_all_aligned(outputs, sources.len())?;
    let outcomes: Vec<VoteOutcome> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| vote_sentence(src, &candidates_at(outputs, i), n_min))
        .collect();
    let output = SystemOutput::new(
        ensemble_name(outputs, n_min),
        outcomes.iter().map(|o| o.sentence.clone()).collect(),
    );
    Ok((output, outcomes))
}
