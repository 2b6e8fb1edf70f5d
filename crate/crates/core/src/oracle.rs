//! Gold-informed upper bounds for combining systems.
//!
//! * Oracle ensembling pools every member's edits, intersects the pool with
//!   each annotation and applies the largest intersection. Every applied edit
//!   belongs to the selected annotation.
//! * Oracle ranking scores each candidate sentence against its locally best
//!   annotation and keeps the top one by `(F0.5, n_correct, -n_proposed)`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{apply_edits, extract_edits};
use crate::corpus::{
    candidates_at, check_all_aligned, Edit, GoldSentence, SystemOutput, TokenSentence,
};
use crate::error::{Error, Result};
use crate::scoring::{key_greater, sentence_counts, SentenceCounts};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum OracleChoice {
    Ensemble {
        sentence: usize,
        annotator: usize,
        edits: Vec<Edit>,
    },
    Rank {
        sentence: usize,
        annotator: usize,
        system: String,
        counts: SentenceCounts,
    },
}

impl OracleChoice {
    pub const TSV_HEADER: &'static str = "sentence_index\tmethod\tannotator\tchoice\tn_selected";

    pub fn tsv_row(&self) -> String {
        match self {
            OracleChoice::Ensemble {
                sentence,
                annotator,
                edits,
            } => format!(
                "{sentence}\toracle-ensemble\t{annotator}\t{annotator}\t{}",
                edits.len()
            ),
            OracleChoice::Rank {
                sentence,
                annotator,
                system,
                counts,
            } => format!(
                "{sentence}\toracle-rank\t{annotator}\t{system}\t{}",
                counts.n_proposed
            ),
        }
    }
}

pub fn audit_tsv(choices: &[OracleChoice]) -> String {
    let mut out = String::from(OracleChoice::TSV_HEADER);
    out.push('\n');
    for c in choices {
        let _ = writeln!(out, "{}", c.tsv_row());
    }
    out
}

/// The annotator (id) whose edits intersect the pool most, and that
/// intersection. Ties go to the lowest annotator id.
pub fn ensemble_selection(
    source: &TokenSentence,
    outputs: &[(&str, &TokenSentence)],
    gold: &GoldSentence,
) -> (usize, Vec<Edit>) {
    let pool: HashSet<Edit> = outputs
        .iter()
        .flat_map(|(_, hyp)| extract_edits(source, hyp))
        .collect();
    let mut best: Option<(usize, Vec<Edit>)> = None;
    for ann in gold.annotations() {
        let shared: Vec<Edit> = ann
            .edits
            .iter()
            .filter(|e| pool.contains(*e))
            .cloned()
            .collect();
        if best.as_ref().is_none_or(|(_, b)| shared.len() > b.len()) {
            best = Some((ann.annotator, shared));
        }
    }
    best.expect("gold sentences carry at least one annotation")
}

pub fn oracle_ensemble(
    source: &TokenSentence,
    outputs: &[(&str, &TokenSentence)],
    gold: &GoldSentence,
) -> TokenSentence {
    let (_, edits) = ensemble_selection(source, outputs, gold);
    apply_edits(source, &edits).expect("a subset of one annotation never conflicts")
}

/// Best `(annotator id, counts)` for one candidate's edits, judged on this
/// sentence alone.
pub fn best_local_annotation(hyp: &[Edit], gold: &GoldSentence) -> (usize, SentenceCounts) {
    let mut best: Option<(usize, SentenceCounts)> = None;
    for ann in gold.annotations() {
        let counts = sentence_counts(hyp, &ann.edits);
        if best.as_ref().is_none_or(|(_, b)| key_greater(&counts, b)) {
            best = Some((ann.annotator, counts));
        }
    }
    best.expect("gold sentences carry at least one annotation")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedCandidate<'a> {
    pub index: usize,
    pub name: &'a str,
    pub sentence: &'a TokenSentence,
    pub annotator: usize,
    pub counts: SentenceCounts,
}

/// Picks the candidate with the greatest `(F0.5, n_correct, -n_proposed)`;
/// full ties keep the earliest candidate.
pub fn oracle_rank_detailed<'a>(
    source: &TokenSentence,
    outputs: &[(&'a str, &'a TokenSentence)],
    gold: &GoldSentence,
) -> Result<RankedCandidate<'a>> {
    let mut best: Option<RankedCandidate<'a>> = None;
    for (index, (name, sentence)) in outputs.iter().enumerate() {
        let edits = extract_edits(source, sentence);
        let (annotator, counts) = best_local_annotation(&edits, gold);
        if best
            .as_ref()
            .is_none_or(|b| key_greater(&counts, &b.counts))
        {
            best = Some(RankedCandidate {
                index,
                name,
                sentence,
                annotator,
                counts,
            });
        }
    }
    best.ok_or_else(|| Error::Validation("oracle ranking needs at least one candidate".into()))
}

pub fn oracle_rank<'a>(
    source: &TokenSentence,
    outputs: &[(&'a str, &'a TokenSentence)],
    gold: &GoldSentence,
) -> Result<(&'a str, &'a TokenSentence)> {
    oracle_rank_detailed(source, outputs, gold).map(|c| (c.name, c.sentence))
}

fn corpus_check(outputs: &[SystemOutput], gold: &[GoldSentence]) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::Validation(
            "an oracle needs at least one system".into(),
        ));
    }
    check_all_aligned(outputs, gold.len())
}

fn member_names(outputs: &[SystemOutput]) -> String {
    outputs
        .iter()
        .map(|o| o.name.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

pub fn oracle_ensemble_corpus(
    outputs: &[SystemOutput],
    gold: &[GoldSentence],
) -> Result<(SystemOutput, Vec<OracleChoice>)> {
    corpus_check(outputs, gold)?;
    let results: Vec<(TokenSentence, OracleChoice)> = gold
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let (annotator, edits) = ensemble_selection(g.source(), &candidates_at(outputs, i), g);
            let sentence = apply_edits(g.source(), &edits).expect("subset of one annotation");
            (
                sentence,
                OracleChoice::Ensemble {
                    sentence: i,
                    annotator,
                    edits,
                },
            )
        })
        .collect();
    let (sentences, choices) = results.into_iter().unzip();
    Ok((
        SystemOutput::new(
            format!("oracle-ensemble({})", member_names(outputs)),
            sentences,
        ),
        choices,
    ))
}

pub fn oracle_rank_corpus(
    outputs: &[SystemOutput],
    gold: &[GoldSentence],
) -> Result<(SystemOutput, Vec<OracleChoice>)> {
    corpus_check(outputs, gold)?;
    let results: Vec<(TokenSentence, OracleChoice)> = gold
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let cands = candidates_at(outputs, i);
            let top = oracle_rank_detailed(g.source(), &cands, g)
                .map_err(|e| Error::at_sentence(i, e))?;
            Ok((
                top.sentence.clone(),
                OracleChoice::Rank {
                    sentence: i,
                    annotator: top.annotator,
                    system: top.name.to_owned(),
                    counts: top.counts,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (sentences, choices) = results.into_iter().unzip();
    Ok((
        SystemOutput::new(format!("oracle-rank({})", member_names(outputs)), sentences),
        choices,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;

    fn s(t: &str) -> TokenSentence {
        TokenSentence::parse(t)
    }

    fn two_annotators() -> GoldSentence {
        // ann0: like, very->really ; ann1: like only
        GoldSentence::new(
            s("I likes turtles very much"),
            vec![
                Annotation {
                    annotator: 0,
                    edits: vec![Edit::new(1, 2, ["like"]), Edit::new(3, 4, ["really"])],
                },
                Annotation {
                    annotator: 1,
                    edits: vec![Edit::new(1, 2, ["like"]), Edit::new(5, 5, ["."])],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn ensemble_full_coverage_reproduces_annotation() {
        let g = two_annotators();
        let a = s("I like turtles very much");
        let b = s("I likes turtles really much");
        let out = oracle_ensemble(g.source(), &[("a", &a), ("b", &b)], &g);
        assert_eq!(out, g.corrected(0));
    }

    #[test]
    fn ensemble_picks_largest_intersection() {
        let g = two_annotators();
        // pool has like + really + stray; ann0 ∩ = 2, ann1 ∩ = 1
        let a = s("I like turtles really much");
        let b = s("You likes turtles very much");
        let (ann, edits) = ensemble_selection(g.source(), &[("a", &a), ("b", &b)], &g);
        assert_eq!(ann, 0);
        assert_eq!(edits.len(), 2);
    }

    #[test]
    fn ensemble_ties_go_to_lowest_annotator() {
        let g = two_annotators();
        let a = s("I like turtles very much");
        let (ann, edits) = ensemble_selection(g.source(), &[("a", &a)], &g);
        assert_eq!((ann, edits.len()), (0, 1));
    }

    #[test]
    fn ensemble_without_shared_edits_leaves_source() {
        let g = two_annotators();
        let a = s("We likes turtles very much");
        assert_eq!(oracle_ensemble(g.source(), &[("a", &a)], &g), *g.source());
    }

    #[test]
    fn rank_prefers_perfect_candidate() {
        let g = two_annotators();
        let good = g.corrected(1);
        let bad = s("I likes turtle very much");
        let (name, _) = oracle_rank(g.source(), &[("bad", &bad), ("good", &good)], &g).unwrap();
        assert_eq!(name, "good");
    }

    #[test]
    fn rank_breaks_f05_tie_on_n_correct() {
        // Both candidates have precision 1; recall 2/2 vs 1/1 under their best
        // annotation gives f05 = 1 for both, so n_correct decides.
        let g = GoldSentence::new(
            s("a b c d"),
            vec![
                Annotation {
                    annotator: 0,
                    edits: vec![Edit::new(0, 1, ["A"]), Edit::new(2, 3, ["C"])],
                },
                Annotation {
                    annotator: 1,
                    edits: vec![Edit::new(0, 1, ["A"])],
                },
            ],
        )
        .unwrap();
        let one = s("A b c d");
        let two = s("A b C d");
        let top = oracle_rank_detailed(g.source(), &[("one", &one), ("two", &two)], &g).unwrap();
        assert_eq!(top.name, "two");
        assert_eq!(top.counts, SentenceCounts::new(2, 2, 2));
    }

    #[test]
    fn rank_full_tie_keeps_input_order() {
        let g = two_annotators();
        let x = s("I like turtles very much");
        let top = oracle_rank_detailed(g.source(), &[("first", &x), ("second", &x)], &g).unwrap();
        assert_eq!(top.index, 0);
        assert!(oracle_rank(g.source(), &[], &g).is_err());
    }

    #[test]
    fn scorer_may_prefer_a_smaller_annotation() {
        // ann0 has 20 edits, two of them proposed; ann1 holds one of those two.
        // The ensemble follows ann0 (larger overlap) but the scorer's running
        // F0.5 is higher under ann1, so precision drops to 1/2.
        let src = s(&(0..40)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" "));
        let ann0: Vec<Edit> = (0..20)
            .map(|i| Edit::new(2 * i, 2 * i + 1, [format!("W{i}")]))
            .collect();
        let g = GoldSentence::new(
            src.clone(),
            vec![
                Annotation {
                    annotator: 0,
                    edits: ann0.clone(),
                },
                Annotation {
                    annotator: 1,
                    edits: vec![ann0[0].clone()],
                },
            ],
        )
        .unwrap();
        let hyp = apply_edits(&src, &ann0[..2]).unwrap();
        let (out, _) = oracle_ensemble_corpus(
            &[SystemOutput::new("m", vec![hyp])],
            std::slice::from_ref(&g),
        )
        .unwrap();
        let report = crate::scoring::score_corpus(&out, &[g]).unwrap();
        assert_eq!(report.per_sentence[0].annotator, 1);
        assert_eq!(report.precision, 0.5);
    }

    #[test]
    fn corpus_wrappers_and_audit() {
        let g = vec![two_annotators()];
        let a = SystemOutput::new("a", vec![s("I like turtles really much")]);
        let b = SystemOutput::new("b", vec![s("I like turtles very much .")]);
        let (out, audit) = oracle_ensemble_corpus(&[a.clone(), b.clone()], &g).unwrap();
        assert_eq!(out.sentences[0], g[0].corrected(0));
        assert_eq!(out.name, "oracle-ensemble(a+b)");
        let tsv = audit_tsv(&audit);
        assert_eq!(tsv.lines().nth(1), Some("0\toracle-ensemble\t0\t0\t2"));

        let (ranked, audit) = oracle_rank_corpus(&[a, b], &g).unwrap();
        assert_eq!(ranked.sentences[0], g[0].corrected(0));
        assert_eq!(
            audit_tsv(&audit).lines().nth(1),
            Some("0\toracle-rank\t0\ta\t2")
        );
    }
}
