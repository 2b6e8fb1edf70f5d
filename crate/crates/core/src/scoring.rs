//! MaxMatch-style corpus scoring.
//!
//! Hypothesis edits are matched exactly (span and replacement) against each
//! annotator's gold edits. Sentences are visited in corpus order and, for
//! each one, the annotator that maximizes the running corpus
//! `(F0.5, n_correct, -n_proposed)` is kept, lowest annotator first on ties.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::extract_edits;
use crate::corpus::{Edit, GoldSentence, SystemOutput};
use crate::error::{Error, Result};

pub const BETA: f64 = 0.5;

/// `(1 + beta^2) p r / (beta^2 p + r)`, and 0 when `p * r == 0`.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    if p * r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (b2 * p + r)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SentenceCounts {
    pub n_correct: usize,
    pub n_proposed: usize,
    pub n_gold: usize,
}

impl SentenceCounts {
    pub fn new(n_correct: usize, n_proposed: usize, n_gold: usize) -> Self {
        debug_assert!(n_correct <= n_proposed.min(n_gold));
        SentenceCounts {
            n_correct,
            n_proposed,
            n_gold,
        }
    }

    /// 1.0 when nothing was proposed.
    pub fn precision(&self) -> f64 {
        if self.n_proposed == 0 {
            1.0
        } else {
            self.n_correct as f64 / self.n_proposed as f64
        }
    }

    /// 1.0 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        if self.n_gold == 0 {
            1.0
        } else {
            self.n_correct as f64 / self.n_gold as f64
        }
    }

    pub fn f05(&self) -> f64 {
        f_beta(self.precision(), self.recall(), BETA)
    }
}

impl Add for SentenceCounts {
    type Output = SentenceCounts;

    fn add(self, rhs: Self) -> Self {
        SentenceCounts {
            n_correct: self.n_correct + rhs.n_correct,
            n_proposed: self.n_proposed + rhs.n_proposed,
            n_gold: self.n_gold + rhs.n_gold,
        }
    }
}

impl AddAssign for SentenceCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Exact-identity matching of hypothesis edits against one gold edit set.
pub fn sentence_counts(hyp: &[Edit], gold: &[Edit]) -> SentenceCounts {
    let gold_set: HashSet<&Edit> = gold.iter().collect();
    let hyp_set: HashSet<&Edit> = hyp.iter().collect();
    let n_correct = hyp_set.iter().filter(|e| gold_set.contains(*e)).count();
    SentenceCounts::new(n_correct, hyp.len(), gold.len())
}

/// Lexicographic selection key `(f05, n_correct, -n_proposed)`.
pub(crate) fn selection_key(c: &SentenceCounts) -> (f64, usize, std::cmp::Reverse<usize>) {
    (c.f05(), c.n_correct, std::cmp::Reverse(c.n_proposed))
}

pub(crate) fn key_greater(a: &SentenceCounts, b: &SentenceCounts) -> bool {
    let (ka, kb) = (selection_key(a), selection_key(b));
    // f05 values are never NaN.
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Greater)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SentenceScore {
    /// Annotator id (not position) chosen for this sentence.
    pub annotator: usize,
    pub counts: SentenceCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub totals: SentenceCounts,
    pub per_sentence: Vec<SentenceScore>,
}

impl ScoreReport {
    fn from_totals(totals: SentenceCounts, per_sentence: Vec<SentenceScore>) -> Self {
        ScoreReport {
            precision: totals.precision(),
            recall: totals.recall(),
            f05: totals.f05(),
            totals,
            per_sentence,
        }
    }

    /// `(P, R, F0.5)` as percentages rounded half-up to one decimal.
    pub fn percentages(&self) -> (f64, f64, f64) {
        (
            to_percent(self.precision),
            to_percent(self.recall),
            to_percent(self.f05),
        )
    }

    pub const TSV_HEADER: &'static str = "P\tR\tF0.5\tn_correct\tn_proposed\tn_gold";

    /// Header plus one data row.
    pub fn to_tsv(&self) -> String {
        format!("{}\n{}\n", Self::TSV_HEADER, self.tsv_row())
    }

    pub fn tsv_row(&self) -> String {
        let (p, r, f) = self.percentages();
        format!(
            "{p:.1}\t{r:.1}\t{f:.1}\t{}\t{}\t{}",
            self.totals.n_correct, self.totals.n_proposed, self.totals.n_gold
        )
    }

    pub fn to_table(&self) -> String {
        let (p, r, f) = self.percentages();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>6}  {:>6}  {:>9}  {:>10}  {:>6}",
            "P", "R", "F0.5", "n_correct", "n_proposed", "n_gold"
        );
        let _ = writeln!(
            out,
            "{p:>6.1}  {r:>6.1}  {f:>6.1}  {:>9}  {:>10}  {:>6}",
            self.totals.n_correct, self.totals.n_proposed, self.totals.n_gold
        );
        out
    }
}

/// `x * 100`, rounded half-up to one decimal.
pub fn to_percent(x: f64) -> f64 {
    // The nudge absorbs representation error such as 0.8375 * 1000 landing
    // just below 837.5.
    (x * 1000.0 + 0.5 + 1e-9).floor() / 10.0
}

/// Scores pre-extracted hypothesis edits, one list per gold sentence.
pub fn score_edits(hyp_edits: &[Vec<Edit>], gold: &[GoldSentence]) -> Result<ScoreReport> {
    if hyp_edits.len() != gold.len() {
        return Err(Error::Validation(format!(
            "hypothesis has {} sentences but the gold corpus has {}",
            hyp_edits.len(),
            gold.len()
        )));
    }
    let mut totals = SentenceCounts::default();
    let mut per_sentence = Vec::with_capacity(gold.len());
    for (hyp, g) in hyp_edits.iter().zip(gold) {
        let mut best: Option<(SentenceScore, SentenceCounts)> = None;
        for ann in g.annotations() {
            let counts = sentence_counts(hyp, &ann.edits);
            let running = totals + counts;
            let better = match &best {
                None => true,
                Some((_, best_running)) => key_greater(&running, best_running),
            };
            if better {
                best = Some((
                    SentenceScore {
                        annotator: ann.annotator,
                        counts,
                    },
                    running,
                ));
            }
        }
        let (chosen, running) = best.expect("gold sentences carry at least one annotation");
        totals = running;
        per_sentence.push(chosen);
    }
    Ok(ScoreReport::from_totals(totals, per_sentence))
}

/// Extracts each hypothesis sentence's edits against its gold source and
/// scores the corpus.
pub fn score_corpus(hypothesis: &SystemOutput, gold: &[GoldSentence]) -> Result<ScoreReport> {
    if hypothesis.len() != gold.len() {
        return Err(Error::LengthMismatch {
            path: hypothesis.name.clone().into(),
            expected: gold.len(),
            found: hypothesis.len(),
        });
    }
    let hyp_edits: Vec<Vec<Edit>> = hypothesis
        .sentences
        .par_iter()
        .zip(gold.par_iter())
        .map(|(h, g)| extract_edits(g.source(), h))
        .collect();
    score_edits(&hyp_edits, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, TokenSentence};

    fn e(start: usize, end: usize, rep: &[&str]) -> Edit {
        Edit::new(start, end, rep.iter().copied())
    }

    #[test]
    fn f_beta_examples() {
        assert_eq!(f_beta(0.5, 0.5, 0.5), 0.5);
        // 1.25 * 0.5 / (0.25 + 0.5)
        assert!((f_beta(1.0, 0.5, 0.5) - 0.833_333_333_333_333_4).abs() < 1e-15);
        assert_eq!(f_beta(0.0, 0.7, 0.5), 0.0);
        assert_eq!(f_beta(0.7, 0.0, 0.5), 0.0);
    }

    #[test]
    fn f05_weights_precision() {
        for (p, r) in [(0.9, 0.3), (0.6, 0.5), (1.0, 0.01)] {
            assert!(f_beta(p, r, BETA) > f_beta(r, p, BETA));
        }
    }

    #[test]
    fn counts_examples() {
        let like = e(1, 2, &["like"]);
        assert_eq!(
            sentence_counts(std::slice::from_ref(&like), std::slice::from_ref(&like)),
            SentenceCounts::new(1, 1, 1)
        );
        assert_eq!(
            sentence_counts(&[], &[like.clone(), e(3, 4, &[])]),
            SentenceCounts::new(0, 0, 2)
        );
        assert_eq!(
            sentence_counts(&[like.clone(), e(4, 4, &["."])], &[like, e(3, 4, &[])]),
            SentenceCounts::new(1, 2, 2)
        );
    }

    #[test]
    fn counts_conventions() {
        let none = SentenceCounts::default();
        assert_eq!(
            (none.precision(), none.recall(), none.f05()),
            (1.0, 1.0, 1.0)
        );
        let only_gold = SentenceCounts::new(0, 0, 3);
        assert_eq!(only_gold.precision(), 1.0);
        assert_eq!(only_gold.f05(), 0.0);
    }

    #[test]
    fn percent_rounding_is_half_up() {
        assert_eq!(to_percent(0.8375), 83.8);
        assert_eq!(to_percent(0.71849), 71.8);
        assert_eq!(to_percent(0.71850), 71.9);
        assert_eq!(to_percent(1.0), 100.0);
        assert_eq!(to_percent(0.0), 0.0);
    }

    fn corpus() -> (SystemOutput, Vec<GoldSentence>) {
        let src = TokenSentence::parse("I likes turtles");
        let gold = vec![
            GoldSentence::new(
                src.clone(),
                vec![
                    Annotation {
                        annotator: 0,
                        edits: vec![e(1, 2, &["like"])],
                    },
                    Annotation {
                        annotator: 1,
                        edits: vec![e(0, 1, &["We"]), e(2, 3, &["tortoises"])],
                    },
                ],
            )
            .unwrap(),
            GoldSentence::single(TokenSentence::parse("a b"), vec![]).unwrap(),
        ];
        let hyp = SystemOutput::new(
            "h",
            vec![
                TokenSentence::parse("I like turtles"),
                TokenSentence::parse("a b"),
            ],
        );
        (hyp, gold)
    }

    #[test]
    fn perfect_hypothesis_scores_one() {
        let (hyp, gold) = corpus();
        let r = score_corpus(&hyp, &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f05), (1.0, 1.0, 1.0));
        assert_eq!(r.per_sentence[0].annotator, 0);
        assert_eq!(r.totals, SentenceCounts::new(1, 1, 1));
        assert_eq!(r.percentages(), (100.0, 100.0, 100.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (mut hyp, gold) = corpus();
        hyp.sentences.pop();
        assert!(score_corpus(&hyp, &gold).is_err());
    }

    #[test]
    fn empty_hypothesis_has_precision_one() {
        let (_, gold) = corpus();
        let hyp = SystemOutput::new("src", gold.iter().map(|g| g.source().clone()).collect());
        let r = score_corpus(&hyp, &gold).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f05, 0.0);
        // Annotator 0 has fewer gold edits, so it maximizes recall-free ties
        // only via the f05 = 0 tie -> lowest id.
        assert_eq!(r.per_sentence[0].annotator, 0);
    }

    #[test]
    fn report_renderings() {
        let (hyp, gold) = corpus();
        let r = score_corpus(&hyp, &gold).unwrap();
        assert_eq!(
            r.to_tsv(),
            "P\tR\tF0.5\tn_correct\tn_proposed\tn_gold\n100.0\t100.0\t100.0\t1\t1\t1\n"
        );
        assert!(r.to_table().contains("F0.5"));
    }
}
