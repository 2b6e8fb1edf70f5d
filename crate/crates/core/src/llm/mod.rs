//! Ranking candidate corrections with a chat model.
//!
//! Candidates are shown under letter labels in a per-sentence shuffled order,
//! the reply is parsed leniently, and the top label is mapped back to its
//! system. Unusable replies and backend failures fall back to label `A` and
//! are flagged, so a corpus run always completes.

mod backend;

pub use backend::{
    complete_with_retry, BackendError, ChatBackend, ChatRequest, FlakyBackend, HttpBackend,
    HttpConfig, MockBackend, RetryPolicy,
};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{candidates_at, check_all_aligned, SystemOutput, TokenSentence};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scoring::ScoreReport;

pub const TEMPERATURE: f64 = 1.0;
pub const MAX_CANDIDATES: usize = 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankVariant {
    /// Pick the single best candidate.
    A,
    /// Rank all candidates.
    B,
}

impl std::str::FromStr for RankVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(RankVariant::A),
            "b" => Ok(RankVariant::B),
            other => Err(format!(
                "unknown prompt variant `{other}` (expected `a` or `b`)"
            )),
        }
    }
}

impl std::fmt::Display for RankVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RankVariant::A => "a",
            RankVariant::B => "b",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    /// Task description, sent as the system message.
    pub preamble: String,
    pub instruction_a: String,
    pub instruction_b: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            preamble: "You are an expert English editor. You will be shown an ORIGINAL sentence \
                       and several EDITED versions of it produced by grammatical error correction \
                       systems. Judge the edited versions by grammaticality, fluency and \
                       faithfulness to the original meaning."
                .into(),
            instruction_a: "Select the best edited version. Answer with its letter only, in \
                            this format:\nOUTPUT:\n<letter>"
                .into(),
            instruction_b: "Rank all edited versions from best to worst. Answer with their \
                            letters separated by spaces, in this format:\nOUTPUT:\n<letter> \
                            <letter> ..."
                .into(),
        }
    }
}

impl PromptTemplate {
    pub fn instruction(&self, variant: RankVariant) -> &str {
        match variant {
            RankVariant::A => &self.instruction_a,
            RankVariant::B => &self.instruction_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPrompt {
    pub variant: RankVariant,
    pub original: TokenSentence,
    /// `(label, candidate)` in presentation order; labels run `A, B, ...`.
    pub labeled: Vec<(char, TokenSentence)>,
    /// `order[k]` is the input index of the candidate shown under label `k`.
    pub order: Vec<usize>,
    /// System name behind each label, same order as `labeled`.
    pub systems: Vec<String>,
    pub system_message: String,
    pub text: String,
}

impl RankPrompt {
    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        self.labeled.iter().map(|(l, _)| *l)
    }

    fn position(&self, label: char) -> Option<usize> {
        self.labeled.iter().position(|(l, _)| *l == label)
    }

    pub fn system_for(&self, label: char) -> Option<&str> {
        self.position(label).map(|k| self.systems[k].as_str())
    }

    pub fn request(&self) -> ChatRequest {
        ChatRequest {
            system: self.system_message.clone(),
            user: self.text.clone(),
            temperature: TEMPERATURE,
        }
    }
}

fn label(k: usize) -> char {
    (b'A' + k as u8) as char
}

/// Renders the ranking prompt. With `seed == None` candidates keep their
/// input order; otherwise they are shuffled by a generator seeded from it.
pub fn build_prompt(
    variant: RankVariant,
    template: &PromptTemplate,
    source: &TokenSentence,
    candidates: &[(&str, &TokenSentence)],
    seed: Option<u64>,
) -> Result<RankPrompt> {
    if candidates.len() < 2 {
        return Err(Error::Validation(format!(
            "ranking needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(Error::Validation(format!(
            "at most {MAX_CANDIDATES} candidates can be labeled, got {}",
            candidates.len()
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut SeedTree::new(seed).rng());
    }
    let labeled: Vec<(char, TokenSentence)> = order
        .iter()
        .enumerate()
        .map(|(k, &i)| (label(k), candidates[i].1.clone()))
        .collect();
    let systems = order.iter().map(|&i| candidates[i].0.to_owned()).collect();

    let mut text = format!("ORIGINAL:\n{source}\nEDITED:\n");
    for (l, s) in &labeled {
        let _ = writeln!(text, "{l}: {s}");
    }
    text.push('\n');
    text.push_str(template.instruction(variant));

    Ok(RankPrompt {
        variant,
        original: source.clone(),
        labeled,
        order,
        systems,
        system_message: template.preamble.clone(),
        text,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseStatus {
    Parsed,
    /// Variant b listed some labels only; the rest were appended in issued
    /// order.
    Completed,
    /// Nothing usable; the default answer was substituted.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankResponse {
    pub variant: RankVariant,
    pub raw: String,
    /// One label for variant a, a full ranking for variant b.
    pub ranking: Vec<char>,
    pub status: ParseStatus,
}

impl RankResponse {
    pub fn top(&self) -> char {
        self.ranking[0]
    }

    fn fallback(prompt: &RankPrompt, raw: &str) -> Self {
        let ranking = match prompt.variant {
            RankVariant::A => vec!['A'],
            RankVariant::B => prompt.labels().collect(),
        };
        RankResponse {
            variant: prompt.variant,
            raw: raw.to_owned(),
            ranking,
            status: ParseStatus::Fallback,
        }
    }
}

/// The part of a reply after its last `OUTPUT:` marker, or all of it.
fn answer_region(raw: &str) -> &str {
    raw.rfind("OUTPUT:")
        .map_or(raw, |i| &raw[i + "OUTPUT:".len()..])
}

fn as_label(token: &str, issued: &[char]) -> Option<char> {
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if issued.contains(&c) => Some(c),
        _ => None,
    }
}

pub fn parse_response(raw: &str, prompt: &RankPrompt) -> RankResponse {
    let issued: Vec<char> = prompt.labels().collect();
    let region = answer_region(raw);
    match prompt.variant {
        RankVariant::A => region
            .split(|c: char| !c.is_ascii_alphanumeric())
            .find_map(|t| as_label(t, &issued))
            .map_or_else(
                || RankResponse::fallback(prompt, raw),
                |l| RankResponse {
                    variant: RankVariant::A,
                    raw: raw.to_owned(),
                    ranking: vec![l],
                    status: ParseStatus::Parsed,
                },
            ),
        RankVariant::B => parse_ranking(raw, region, prompt, &issued),
    }
}

fn parse_ranking(raw: &str, region: &str, prompt: &RankPrompt, issued: &[char]) -> RankResponse {
    let mut best: Vec<char> = Vec::new();
    let mut run: Vec<char> = Vec::new();
    for token in region.split_whitespace() {
        let core = token.trim_matches(|c: char| !c.is_ascii_alphanumeric());
        if core.is_empty() {
            continue;
        }
        match as_label(core, issued) {
            Some(l) => run.push(l),
            None => {
                if run.len() > best.len() {
                    best = std::mem::take(&mut run);
                }
                run.clear();
            }
        }
    }
    if run.len() > best.len() {
        best = run;
    }
    let mut seen = std::collections::HashSet::new();
    if best.is_empty() || !best.iter().all(|l| seen.insert(*l)) {
        return RankResponse::fallback(prompt, raw);
    }
    let status = if best.len() == issued.len() {
        ParseStatus::Parsed
    } else {
        best.extend(issued.iter().filter(|l| !seen.contains(*l)));
        ParseStatus::Completed
    };
    RankResponse {
        variant: RankVariant::B,
        raw: raw.to_owned(),
        ranking: best,
        status,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlmDecision {
    pub sentence: usize,
    /// System names in presentation order (label `A` first).
    pub presented: Vec<String>,
    pub ranking: Vec<char>,
    pub system: String,
    pub status: ParseStatus,
    /// Set when the backend failed after all retries.
    pub backend_error: Option<String>,
}

impl LlmDecision {
    pub const TSV_HEADER: &'static str = "sentence_index\tchoice\tranking\tstatus\tpresented";

    pub fn flagged(&self) -> bool {
        self.status != ParseStatus::Parsed || self.backend_error.is_some()
    }

    pub fn tsv_row(&self) -> String {
        let status = match (&self.backend_error, self.status) {
            (Some(_), _) => "backend-error",
            (None, ParseStatus::Parsed) => "parsed",
            (None, ParseStatus::Completed) => "completed",
            (None, ParseStatus::Fallback) => "fallback",
        };
        let ranking: String = self.ranking.iter().collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.sentence,
            self.system,
            ranking,
            status,
            self.presented.join(",")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmRun {
    pub seed: u64,
    pub output: SystemOutput,
    pub decisions: Vec<LlmDecision>,
}

impl LlmRun {
    pub fn audit_tsv(&self) -> String {
        let mut out = String::from(LlmDecision::TSV_HEADER);
        out.push('\n');
        for d in &self.decisions {
            let _ = writeln!(out, "{}", d.tsv_row());
        }
        out
    }

    pub fn flagged(&self) -> usize {
        self.decisions.iter().filter(|d| d.flagged()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmRankOptions {
    pub variant: RankVariant,
    pub template: PromptTemplate,
    pub retry: RetryPolicy,
    /// Keep input order instead of shuffling.
    pub no_shuffle: bool,
    /// Upper bound on concurrent requests; `None` uses the global pool.
    pub max_concurrency: Option<usize>,
}

impl Default for LlmRankOptions {
    fn default() -> Self {
        LlmRankOptions {
            variant: RankVariant::A,
            template: PromptTemplate::default(),
            retry: RetryPolicy::default(),
            no_shuffle: false,
            max_concurrency: None,
        }
    }
}

pub fn llm_rank_name(variant: RankVariant, outputs: &[SystemOutput], seed: u64) -> String {
    let members: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
    format!("llm-rank-{variant}({})#{seed}", members.join("+"))
}

fn rank_sentence(
    i: usize,
    source: &TokenSentence,
    outputs: &[SystemOutput],
    seed: u64,
    backend: &dyn ChatBackend,
    options: &LlmRankOptions,
) -> Result<(TokenSentence, LlmDecision)> {
    let cands = candidates_at(outputs, i);
    let shuffle_seed =
        (!options.no_shuffle).then(|| SeedTree::new(seed).child("shuffle").index(i as u64).seed());
    let prompt = build_prompt(
        options.variant,
        &options.template,
        source,
        &cands,
        shuffle_seed,
    )?;
    let (response, backend_error) =
        match complete_with_retry(backend, &prompt.request(), &options.retry) {
            Ok(raw) => (parse_response(&raw, &prompt), None),
            Err(e) => (RankResponse::fallback(&prompt, ""), Some(e.message)),
        };
    let k = prompt
        .position(response.top())
        .expect("parsed labels are issued labels");
    let chosen = prompt.labeled[k].1.clone();
    Ok((
        chosen,
        LlmDecision {
            sentence: i,
            presented: prompt.systems.clone(),
            ranking: response.ranking,
            system: prompt.systems[k].clone(),
            status: response.status,
            backend_error,
        },
    ))
}

fn rank_run(
    sources: &[TokenSentence],
    outputs: &[SystemOutput],
    seed: u64,
    backend: &dyn ChatBackend,
    options: &LlmRankOptions,
) -> Result<LlmRun> {
    let results: Vec<(TokenSentence, LlmDecision)> = sources
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            rank_sentence(i, src, outputs, seed, backend, options)
                .map_err(|e| Error::at_sentence(i, e))
        })
        .collect::<Result<_>>()?;
    let (sentences, decisions) = results.into_iter().unzip();
    Ok(LlmRun {
        seed,
        output: SystemOutput::new(llm_rank_name(options.variant, outputs, seed), sentences),
        decisions,
    })
}

/// One ranked output per seed. Runs are kept separate so their scores can be
/// averaged.
pub fn llm_rank_corpus(
    sources: &[TokenSentence],
    outputs: &[SystemOutput],
    seeds: &[u64],
    backend: &dyn ChatBackend,
    options: &LlmRankOptions,
) -> Result<Vec<LlmRun>> {
    if seeds.is_empty() {
        return Err(Error::Validation(
            "llm ranking needs at least one run".into(),
        ));
    }
    if outputs.len() < 2 {
        return Err(Error::Validation(format!(
            "llm ranking needs at least 2 systems, got {}",
            outputs.len()
        )));
    }
    check_all_aligned(outputs, sources.len())?;
    let run_all = || {
        seeds
            .iter()
            .map(|&seed| rank_run(sources, outputs, seed, backend, options))
            .collect::<Result<Vec<_>>>()
    };
    match options.max_concurrency {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    }
}

/// Seeds for `runs` runs derived from one master seed.
pub fn run_seeds(master: u64, runs: usize) -> Vec<u64> {
    let root = SeedTree::new(master).child("llm-runs");
    (0..runs as u64).map(|r| root.index(r).seed()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSpread {
    pub mean: f64,
    /// Two population standard deviations.
    pub two_std: f64,
}

impl MeanSpread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanSpread {
            mean,
            two_std: 2.0 * var.sqrt(),
        }
    }
}

impl std::fmt::Display for MeanSpread {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.two_std)
    }
}

/// Per-metric mean and spread over runs, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub runs: usize,
    pub precision: MeanSpread,
    pub recall: MeanSpread,
    pub f05: MeanSpread,
}

impl RunSummary {
    pub const TSV_HEADER: &'static str = "runs\tP\tP_2std\tR\tR_2std\tF0.5\tF0.5_2std";

    pub fn tsv_row(&self) -> String {
        let p = |m: MeanSpread| format!("{:.1}\t{:.1}", m.mean, m.two_std);
        format!(
            "{}\t{}\t{}\t{}",
            self.runs,
            p(self.precision),
            p(self.recall),
            p(self.f05)
        )
    }
}

pub fn summarize_runs(reports: &[ScoreReport]) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(Error::Validation("no runs to summarize".into()));
    }
    let pick = |f: fn(&ScoreReport) -> f64| -> MeanSpread {
        MeanSpread::of(&reports.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>())
    };
    Ok(RunSummary {
        runs: reports.len(),
        precision: pick(|r| r.precision),
        recall: pick(|r| r.recall),
        f05: pick(|r| r.f05),
    })
}
