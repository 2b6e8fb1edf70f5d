//! Sentence-level candidate selection.
//!
//! Score ranking picks the candidate with the highest external quality score.
//! Frequency-weighted ranking first scales every score by
//! `w_j = n_j / max_k n_k`, where `n_j` counts the systems that produced the
//! exact same sentence, so popular outputs are favoured. Aggressiveness
//! ranking chooses between two ensembles by how many spans they edit.

mod cluster;

use std::collections::HashMap;

use serde::Serialize;

use crate::alignment::extract_edits;
use crate::corpus::{candidates_at, check_all_aligned, ScoreFile, SystemOutput, TokenSentence};
use crate::error::{Error, Result};

pub use cluster::{
    average_linkage, cluster_systems, cut_dendrogram, sentence_similarities, similarity_matrix,
    Cluster, Clustering, Merge, SimilarityMatrix,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightedCandidate {
    pub system: String,
    pub sentence: TokenSentence,
    pub raw_score: f64,
    pub frequency: usize,
    pub weight: f64,
    pub weighted_score: f64,
}

fn check_scores(candidates: &[(&str, &TokenSentence)], scores: &[f64]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Validation(
            "ranking needs at least one candidate".into(),
        ));
    }
    if scores.len() < candidates.len() {
        return Err(Error::Validation(format!(
            "missing score for candidate `{}`",
            candidates[scores.len()].0
        )));
    }
    if scores.len() > candidates.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite score for candidate `{}`",
            candidates[i].0
        )));
    }
    Ok(())
}

/// Index of the highest score; ties go to the lexicographically smallest
/// sentence, then to the earliest candidate.
fn argmax(candidates: &[(&str, &TokenSentence)], scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_text = candidates[0].1.to_string();
    for i in 1..candidates.len() {
        if scores[i] > scores[best] {
            best = i;
            best_text = candidates[i].1.to_string();
        } else if scores[i] == scores[best] {
            let text = candidates[i].1.to_string();
            if text < best_text {
                best = i;
                best_text = text;
            }
        }
    }
    best
}

/// Index of the selected candidate.
pub fn rank_by_score(candidates: &[(&str, &TokenSentence)], scores: &[f64]) -> Result<usize> {
    check_scores(candidates, scores)?;
    Ok(argmax(candidates, scores))
}

/// `n_j / max_k n_k` for each entry of `frequencies`.
pub fn frequency_weights(frequencies: &[usize]) -> Vec<f64> {
    let max = frequencies.iter().copied().max().unwrap_or(1).max(1) as f64;
    frequencies.iter().map(|&n| n as f64 / max).collect()
}

/// Scores re-weighted by how many candidates share the exact same sentence.
pub fn weight_candidates(
    candidates: &[(&str, &TokenSentence)],
    scores: &[f64],
) -> Result<Vec<WeightedCandidate>> {
    check_scores(candidates, scores)?;
    let mut counts: HashMap<&TokenSentence, usize> = HashMap::new();
    for (_, s) in candidates {
        *counts.entry(s).or_default() += 1;
    }
    let freqs: Vec<usize> = candidates.iter().map(|(_, s)| counts[s]).collect();
    let weights = frequency_weights(&freqs);
    Ok(candidates
        .iter()
        .zip(scores)
        .zip(freqs.iter().zip(weights))
        .map(
            |(((name, sentence), &raw), (&frequency, weight))| WeightedCandidate {
                system: (*name).to_owned(),
                sentence: (*sentence).clone(),
                raw_score: raw,
                frequency,
                weight,
                weighted_score: raw * weight,
            },
        )
        .collect())
}

/// Index of the candidate with the highest frequency-weighted score, with
/// [`rank_by_score`] tie-breaks.
pub fn rank_weighted(candidates: &[(&str, &TokenSentence)], scores: &[f64]) -> Result<usize> {
    let weighted = weight_candidates(candidates, scores)?;
    let ws: Vec<f64> = weighted.iter().map(|w| w.weighted_score).collect();
    Ok(argmax(candidates, &ws))
}

fn ranked_corpus(
    outputs: &[SystemOutput],
    scores: &ScoreFile,
    label: &str,
    select: fn(&[(&str, &TokenSentence)], &[f64]) -> Result<usize>,
) -> Result<SystemOutput> {
    if outputs.is_empty() {
        return Err(Error::Validation(
            "ranking needs at least one system".into(),
        ));
    }
    let n = outputs[0].len();
    check_all_aligned(outputs, n)?;
    let mut sentences = Vec::with_capacity(n);
    for i in 0..n {
        let cands = candidates_at(outputs, i);
        let s: Vec<f64> = outputs
            .iter()
            .map(|o| scores.get(&o.name, i))
            .collect::<Result<_>>()?;
        let best = select(&cands, &s).map_err(|e| Error::at_sentence(i, e))?;
        sentences.push(cands[best].1.clone());
    }
    let members: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
    Ok(SystemOutput::new(
        format!("{label}({})", members.join("+")),
        sentences,
    ))
}

/// Per-sentence [`rank_by_score`] with scores looked up by system name.
pub fn rank_corpus(outputs: &[SystemOutput], scores: &ScoreFile) -> Result<SystemOutput> {
    ranked_corpus(outputs, scores, "rank", rank_by_score)
}

/// Per-sentence [`rank_weighted`] with scores looked up by system name.
pub fn rank_weighted_corpus(outputs: &[SystemOutput], scores: &ScoreFile) -> Result<SystemOutput> {
    ranked_corpus(outputs, scores, "rank-w", rank_weighted)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggrChoice {
    Primary,
    Alternative,
}

/// The primary candidate wins only if it edits strictly fewer spans than the
/// alternative and edits at least one.
pub fn aggr_choice(primary_spans: usize, alternative_spans: usize) -> AggrChoice {
    if primary_spans < alternative_spans && primary_spans >= 1 {
        AggrChoice::Primary
    } else {
        AggrChoice::Alternative
    }
}

pub fn aggr_rank(
    primary: &TokenSentence,
    alternative: &TokenSentence,
    source: &TokenSentence,
) -> TokenSentence {
    let e_p = extract_edits(source, primary).len();
    let e_a = extract_edits(source, alternative).len();
    match aggr_choice(e_p, e_a) {
        AggrChoice::Primary => primary.clone(),
        AggrChoice::Alternative => alternative.clone(),
    }
}

pub fn aggr_rank_corpus(
    sources: &[TokenSentence],
    primary: &SystemOutput,
    alternative: &SystemOutput,
) -> Result<SystemOutput> {
    primary.check_aligned(sources.len())?;
    alternative.check_aligned(sources.len())?;
    let sentences = sources
        .iter()
        .zip(primary.sentences.iter().zip(&alternative.sentences))
        .map(|(src, (p, a))| aggr_rank(p, a, src))
        .collect();
    Ok(SystemOutput::new(
        format!("aggr-rank({},{})", primary.name, alternative.name),
        sentences,
    ))
}
