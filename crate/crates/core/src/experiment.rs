//! Config-driven experiment runs.
//!
//! A TOML file names the gold corpus, the member system outputs and one
//! combination method. Relative paths resolve against the config file's
//! directory.
//!
//! ```toml
//! name = "vote-best7"
//! gold = "../data/conll14/official-2014.combined.m2"
//! output_dir = "../results"
//!
//! [method]
//! kind = "vote"
//! n_min = 3
//!
//! [[systems]]
//! name = "t5"
//! path = "../data/conll14/t5.txt"
//! ```
//!
//! Every run writes `<name>.txt`, `<name>.report.tsv` and `<name>.result.tsv`
//! to the output directory, plus method-specific audit files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_parallel, read_m2, read_sentences, GoldSentence, ScoreFile, SystemOutput, TokenSentence,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::llm::{
    llm_rank_corpus, run_seeds, summarize_runs, ChatBackend, HttpBackend, HttpConfig,
    LlmRankOptions, MockBackend, PromptTemplate, RankVariant, RetryPolicy, RunSummary,
};
use crate::oracle::{audit_tsv, oracle_ensemble_corpus, oracle_rank_corpus};
use crate::ranking::{aggr_rank_corpus, cluster_systems, rank_corpus, rank_weighted_corpus};
use crate::scoring::{score_corpus, to_percent, ScoreReport};
use crate::voting::majority_vote_corpus_detailed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// `lexmin`, `first` or `label:<A-Z>`.
    Mock(String),
    Http(HttpConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    Vote {
        n_min: usize,
    },
    /// Voting whose members are themselves ensemble outputs.
    SecondOrderVote {
        n_min: usize,
    },
    OracleEnsemble,
    OracleRank,
    Rank {
        scores: PathBuf,
    },
    RankW {
        scores: PathBuf,
    },
    /// First system is the primary candidate, second the alternative.
    AggrRank,
    LlmRank {
        variant: RankVariant,
        #[serde(default = "default_runs")]
        runs: usize,
        #[serde(default)]
        seed: u64,
        /// Explicit per-run seeds; overrides `runs` and `seed`.
        #[serde(default)]
        seeds: Option<Vec<u64>>,
        backend: BackendSpec,
        #[serde(default)]
        template: Option<PromptTemplate>,
        #[serde(default)]
        retry: Option<RetryPolicy>,
        #[serde(default)]
        max_concurrency: Option<usize>,
    },
    Cluster {
        threshold: f64,
    },
}

fn default_runs() -> usize {
    4
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Vote { .. } => "vote",
            Method::SecondOrderVote { .. } => "second-order-vote",
            Method::OracleEnsemble => "oracle-ensemble",
            Method::OracleRank => "oracle-rank",
            Method::Rank { .. } => "rank",
            Method::RankW { .. } => "rank-w",
            Method::AggrRank => "aggr-rank",
            Method::LlmRank { .. } => "llm-rank",
            Method::Cluster { .. } => "cluster",
        }
    }

    fn needs_gold(&self) -> bool {
        !matches!(self, Method::Cluster { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Source sentences; defaults to the sources in `gold`.
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub gold: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub method: Method,
    pub systems: Vec<SystemSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.resolve(&self.output_dir)
            .join(format!("{}{suffix}", self.name))
    }

    /// Checks parameters and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("experiment `{}`: {msg}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty and contain no path separators".into());
        }
        let n = self.systems.len();
        let mut names: Vec<&str> = self.systems.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate system name `{}`", w[0]));
        }
        let min_systems = match &self.method {
            Method::Vote { n_min } | Method::SecondOrderVote { n_min } => {
                if *n_min > n {
                    return bad(format!(
                        "n_min = {n_min} exceeds the number of systems ({n})"
                    ));
                }
                1
            }
            Method::OracleEnsemble
            | Method::OracleRank
            | Method::Rank { .. }
            | Method::RankW { .. } => 1,
            Method::AggrRank => {
                if n != 2 {
                    return bad(format!("aggr-rank takes exactly 2 systems, got {n}"));
                }
                2
            }
            Method::LlmRank {
                runs,
                seeds,
                max_concurrency,
                backend,
                ..
            } => {
                if seeds.as_ref().map_or(*runs, Vec::len) == 0 {
                    return bad("llm-rank needs at least one run".into());
                }
                if *max_concurrency == Some(0) {
                    return bad("max_concurrency must be at least 1".into());
                }
                if let BackendSpec::Mock(m) = backend {
                    if let Err(e) = m.parse::<MockBackend>() {
                        return bad(e);
                    }
                }
                2
            }
            Method::Cluster { threshold } => {
                if !threshold.is_finite() || *threshold < 0.0 {
                    return bad(format!("bad clustering threshold {threshold}"));
                }
                2
            }
        };
        if n < min_systems {
            return bad(format!(
                "{} needs at least {min_systems} systems, got {n}",
                self.method.label()
            ));
        }
        if self.method.needs_gold() && self.gold.is_none() {
            return bad(format!("{} needs a gold file", self.method.label()));
        }
        if self.gold.is_none() && self.source.is_none() && matches!(self.method, Method::AggrRank) {
            return bad("aggr-rank needs a source or gold file".into());
        }
        let mut inputs: Vec<&Path> = self.systems.iter().map(|s| s.path.as_path()).collect();
        inputs.extend(self.source.as_deref());
        inputs.extend(self.gold.as_deref());
        if let Method::Rank { scores } | Method::RankW { scores } = &self.method {
            inputs.push(scores);
        }
        for p in inputs {
            let resolved = self.resolve(p);
            if !resolved.is_file() {
                return bad(format!("input file {} does not exist", resolved.display()));
            }
        }
        Ok(())
    }
}

/// Inputs of one experiment, read and cross-checked.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub sources: Option<Vec<TokenSentence>>,
    pub gold: Option<Vec<GoldSentence>>,
    pub systems: Vec<SystemOutput>,
}

impl Inputs {
    fn sources(&self) -> Result<&[TokenSentence]> {
        self.sources
            .as_deref()
            .ok_or_else(|| Error::Config("this method needs source sentences".into()))
    }

    fn gold(&self) -> Result<&[GoldSentence]> {
        self.gold
            .as_deref()
            .ok_or_else(|| Error::Config("this method needs a gold file".into()))
    }

    pub fn without(&self, index: usize) -> Inputs {
        let mut systems = self.systems.clone();
        systems.remove(index);
        Inputs {
            sources: self.sources.clone(),
            gold: self.gold.clone(),
            systems,
        }
    }
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs> {
    config.validate()?;
    let gold = config
        .gold
        .as_ref()
        .map(|p| read_m2(config.resolve(p)))
        .transpose()?;
    let gold_sources = gold
        .as_ref()
        .map(|g| g.iter().map(|s| s.source().clone()).collect::<Vec<_>>());
    let sources = match (&config.source, gold_sources) {
        (Some(path), gold_sources) => {
            let path = config.resolve(path);
            let sources = read_sentences(&path)?;
            if let Some(gs) = gold_sources {
                if gs.len() != sources.len() {
                    return Err(Error::LengthMismatch {
                        path,
                        expected: gs.len(),
                        found: sources.len(),
                    });
                }
                if let Some(i) = (0..gs.len()).find(|&i| gs[i] != sources[i]) {
                    return Err(Error::at_sentence(
                        i,
                        Error::Validation(format!(
                            "{} disagrees with the gold source",
                            path.display()
                        )),
                    ));
                }
            }
            Some(sources)
        }
        (None, gs) => gs,
    };
    let expected = match (&sources, config.systems.first()) {
        (Some(s), _) => s.len(),
        (None, Some(first)) => read_sentences(config.resolve(&first.path))?.len(),
        (None, None) => 0,
    };
    let systems = config
        .systems
        .iter()
        .map(|spec| {
            let mut out = load_parallel(config.resolve(&spec.path), expected)?;
            out.name = spec.name.clone();
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Inputs {
        sources,
        gold,
        systems,
    })
}

/// One line of a results table: percentages rounded half-up to one decimal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub name: String,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub n_correct: usize,
    pub n_proposed: usize,
    pub n_gold: usize,
}

impl ResultRow {
    pub const TSV_HEADER: &'static str = "name\tmethod\tP\tR\tF0.5\tn_correct\tn_proposed\tn_gold";

    pub fn new(name: impl Into<String>, method: impl Into<String>, report: &ScoreReport) -> Self {
        ResultRow {
            name: name.into(),
            method: method.into(),
            precision: to_percent(report.precision),
            recall: to_percent(report.recall),
            f05: to_percent(report.f05),
            n_correct: report.totals.n_correct,
            n_proposed: report.totals.n_proposed,
            n_gold: report.totals.n_gold,
        }
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{}\t{}\t{}",
            self.name,
            self.method,
            self.precision,
            self.recall,
            self.f05,
            self.n_correct,
            self.n_proposed,
            self.n_gold
        )
    }
}

pub fn rows_tsv(rows: &[ResultRow]) -> String {
    let mut out = String::from(ResultRow::TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.tsv_row());
    }
    out
}

/// What a run produced, before anything touches disk.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// Combined outputs; one per run for llm-rank, none for clustering.
    pub outputs: Vec<SystemOutput>,
    pub reports: Vec<ScoreReport>,
    pub rows: Vec<ResultRow>,
    pub summary: Option<RunSummary>,
    /// `(file suffix, contents)` for extra artifacts.
    pub artifacts: Vec<(String, String)>,
}

fn with_backend<T>(
    spec: &BackendSpec,
    override_backend: Option<&dyn ChatBackend>,
    f: impl FnOnce(&dyn ChatBackend) -> Result<T>,
) -> Result<T> {
    if let Some(b) = override_backend {
        return f(b);
    }
    match spec {
        BackendSpec::Mock(m) => {
            let mock: MockBackend = m.parse().map_err(Error::Config)?;
            f(&mock)
        }
        BackendSpec::Http(cfg) => f(&HttpBackend::new(cfg)),
    }
}

/// Runs the configured method on already loaded inputs.
pub fn execute(
    config: &ExperimentConfig,
    inputs: &Inputs,
    backend: Option<&dyn ChatBackend>,
) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let single = |output: SystemOutput, mut outcome: Outcome| -> Result<Outcome> {
        let report = score_corpus(&output, inputs.gold()?)?;
        outcome
            .rows
            .push(ResultRow::new(&config.name, config.method.label(), &report));
        outcome.reports.push(report);
        outcome.outputs.push(output);
        Ok(outcome)
    };
    match &config.method {
        Method::Vote { n_min } | Method::SecondOrderVote { n_min } => {
            let (output, decisions) =
                majority_vote_corpus_detailed(inputs.sources()?, &inputs.systems, *n_min)?;
            let mut votes = String::from("sentence_index\tapplied\tskipped\n");
            for (i, d) in decisions.iter().enumerate() {
                let _ = writeln!(votes, "{i}\t{}\t{}", d.applied.len(), d.skipped.len());
            }
            outcome.artifacts.push((".votes.tsv".into(), votes));
            single(output, outcome)
        }
        Method::OracleEnsemble | Method::OracleRank => {
            let gold = inputs.gold()?;
            let (output, choices) = if matches!(config.method, Method::OracleEnsemble) {
                oracle_ensemble_corpus(&inputs.systems, gold)?
            } else {
                oracle_rank_corpus(&inputs.systems, gold)?
            };
            outcome
                .artifacts
                .push((".audit.tsv".into(), audit_tsv(&choices)));
            single(output, outcome)
        }
        Method::Rank { scores } | Method::RankW { scores } => {
            let scores = ScoreFile::read(config.resolve(scores))?;
            let output = if matches!(config.method, Method::Rank { .. }) {
                rank_corpus(&inputs.systems, &scores)?
            } else {
                rank_weighted_corpus(&inputs.systems, &scores)?
            };
            single(output, outcome)
        }
        Method::AggrRank => {
            let output =
                aggr_rank_corpus(inputs.sources()?, &inputs.systems[0], &inputs.systems[1])?;
            single(output, outcome)
        }
        Method::LlmRank {
            variant,
            runs,
            seed,
            seeds,
            backend: spec,
            template,
            retry,
            max_concurrency,
        } => {
            let seeds = seeds.clone().unwrap_or_else(|| run_seeds(*seed, *runs));
            let options = LlmRankOptions {
                variant: *variant,
                template: template.clone().unwrap_or_default(),
                retry: retry.unwrap_or_default(),
                no_shuffle: false,
                max_concurrency: *max_concurrency,
            };
            let sources = inputs.sources()?;
            let runs = with_backend(spec, backend, |b| {
                llm_rank_corpus(sources, &inputs.systems, &seeds, b, &options)
            })?;
            let gold = inputs.gold()?;
            for (r, run) in runs.into_iter().enumerate() {
                let report = score_corpus(&run.output, gold)?;
                outcome.rows.push(ResultRow::new(
                    format!("{}.run{r}", config.name),
                    config.method.label(),
                    &report,
                ));
                outcome
                    .artifacts
                    .push((format!(".run{r}.audit.tsv"), run.audit_tsv()));
                outcome.reports.push(report);
                outcome.outputs.push(run.output);
            }
            let summary = summarize_runs(&outcome.reports)?;
            outcome.artifacts.push((
                ".summary.tsv".into(),
                format!("{}\n{}\n", RunSummary::TSV_HEADER, summary.tsv_row()),
            ));
            outcome.summary = Some(summary);
            Ok(outcome)
        }
        Method::Cluster { threshold } => {
            let clustering = cluster_systems(&inputs.systems, *threshold)?;
            outcome
                .artifacts
                .push((".similarity.tsv".into(), clustering.matrix.to_tsv()));
            outcome
                .artifacts
                .push((".dendrogram.tsv".into(), clustering.dendrogram_tsv()));
            outcome
                .artifacts
                .push((".clusters.tsv".into(), clustering.report_tsv()));
            Ok(outcome)
        }
    }
}

fn output_text(output: &SystemOutput) -> String {
    output.sentences.iter().map(|s| format!("{s}\n")).collect()
}

/// Writes an outcome's files; returns their paths in write order.
pub fn write_outcome(config: &ExperimentConfig, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match outcome.outputs.len() {
        0 => {}
        1 => {
            files.push((config.output_path(".txt"), output_text(&outcome.outputs[0])));
            files.push((
                config.output_path(".report.tsv"),
                outcome.reports[0].to_tsv(),
            ));
        }
        _ => {
            for (r, (out, report)) in outcome.outputs.iter().zip(&outcome.reports).enumerate() {
                files.push((
                    config.output_path(&format!(".run{r}.txt")),
                    output_text(out),
                ));
                files.push((
                    config.output_path(&format!(".run{r}.report.tsv")),
                    report.to_tsv(),
                ));
            }
        }
    }
    if !outcome.rows.is_empty() {
        files.push((config.output_path(".result.tsv"), rows_tsv(&outcome.rows)));
    }
    for (suffix, text) in &outcome.artifacts {
        files.push((config.output_path(suffix), text.clone()));
    }
    for (path, text) in &files {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, None)
}

/// Like [`run_experiment`], with `backend` replacing any configured chat
/// backend.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    backend: Option<&dyn ChatBackend>,
) -> Result<ExperimentResult> {
    let inputs = load_inputs(config)?;
    let outcome = execute(config, &inputs, backend)?;
    let files = write_outcome(config, &outcome)?;
    Ok(ExperimentResult { outcome, files })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// `None` for the full ensemble.
    pub left_out: Option<String>,
    pub report: ScoreReport,
}

impl AblationRow {
    pub fn result_row(&self, config: &ExperimentConfig) -> ResultRow {
        let name = match &self.left_out {
            None => config.name.clone(),
            Some(s) => format!("{} w/o {s}", config.name),
        };
        ResultRow::new(name, config.method.label(), &self.report)
    }
}

/// The full combination plus one leave-one-out run per member system.
pub fn ablation_on(
    config: &ExperimentConfig,
    inputs: &Inputs,
    backend: Option<&dyn ChatBackend>,
) -> Result<Vec<AblationRow>> {
    if inputs.systems.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs at least 3 systems, got {}",
            inputs.systems.len()
        )));
    }
    let first_report = |o: Outcome| {
        o.reports.into_iter().next().ok_or_else(|| {
            Error::Config(format!(
                "{} produces no scored output",
                config.method.label()
            ))
        })
    };
    let mut rows = vec![AblationRow {
        left_out: None,
        report: first_report(execute(config, inputs, backend)?)?,
    }];
    for (k, sys) in inputs.systems.iter().enumerate() {
        let mut reduced = config.clone();
        reduced.systems.remove(k);
        if let Method::Vote { n_min } | Method::SecondOrderVote { n_min } = &mut reduced.method {
            *n_min = (*n_min).min(reduced.systems.len());
        }
        rows.push(AblationRow {
            left_out: Some(sys.name.clone()),
            report: first_report(execute(&reduced, &inputs.without(k), backend)?)?,
        });
    }
    Ok(rows)
}

/// Runs [`ablation_on`] and writes `<name>.ablation.tsv`.
pub fn ablation_remove_one(config: &ExperimentConfig) -> Result<(Vec<AblationRow>, PathBuf)> {
    let inputs = load_inputs(config)?;
    let rows = ablation_on(config, &inputs, None)?;
    let table: Vec<ResultRow> = rows.iter().map(|r| r.result_row(config)).collect();
    let path = config.output_path(".ablation.tsv");
    write_atomic(&path, rows_tsv(&table).as_bytes())?;
    Ok((rows, path))
}

/// Vote reports for each threshold in `n_mins`.
pub fn sweep_n_min(inputs: &Inputs, n_mins: &[usize]) -> Result<Vec<(usize, ScoreReport)>> {
    let gold = inputs.gold()?;
    n_mins
        .iter()
        .map(|&n| {
            let (out, _) = majority_vote_corpus_detailed(inputs.sources()?, &inputs.systems, n)?;
            Ok((n, score_corpus(&out, gold)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{serialize_m2, Annotation, Edit};

    fn s(t: &str) -> TokenSentence {
        TokenSentence::parse(t)
    }

    struct Fixture {
        dir: tempfile::TempDir,
    }

    impl Fixture {
        fn new() -> Self {
            let dir = tempfile::tempdir().unwrap();
            let gold = vec![
                GoldSentence::single(s("I likes turtles ."), vec![Edit::new(1, 2, ["like"])])
                    .unwrap(),
                GoldSentence::new(
                    s("He go to school"),
                    vec![
                        Annotation {
                            annotator: 0,
                            edits: vec![Edit::new(1, 2, ["goes"]), Edit::new(4, 4, ["."])],
                        },
                        Annotation {
                            annotator: 1,
                            edits: vec![Edit::new(1, 2, ["went"]), Edit::new(4, 4, ["."])],
                        },
                    ],
                )
                .unwrap(),
                GoldSentence::single(s("This is fine ."), vec![]).unwrap(),
            ];
            std::fs::write(dir.path().join("gold.m2"), serialize_m2(&gold)).unwrap();
            let systems = [
                (
                    "a",
                    "I like turtles .\nHe goes to school .\nThis is fine .\n",
                ),
                ("b", "I like turtles .\nHe goes to school\nThis is fine !\n"),
                (
                    "c",
                    "I liked turtles .\nHe go to the school .\nThis is fine .\n",
                ),
            ];
            for (name, text) in systems {
                std::fs::write(dir.path().join(format!("{name}.txt")), text).unwrap();
            }
            std::fs::write(
                dir.path().join("scores.tsv"),
                "system\tsentence_index\tscore\n\
                 a\t0\t0.9\na\t1\t0.2\na\t2\t0.5\n\
                 b\t0\t0.1\nb\t1\t0.8\nb\t2\t0.4\n\
                 c\t0\t0.3\nc\t1\t0.1\nc\t2\t0.9\n",
            )
            .unwrap();
            Fixture { dir }
        }

        fn config(&self, method: &str, systems: &[&str]) -> ExperimentConfig {
            let mut text = format!(
                "name = \"exp\"\ngold = \"gold.m2\"\noutput_dir = \"out\"\n\n[method]\n{method}\n"
            );
            for sys in systems {
                text.push_str(&format!(
                    "\n[[systems]]\nname = \"{sys}\"\npath = \"{sys}.txt\"\n"
                ));
            }
            ExperimentConfig::parse(&text, self.dir.path()).unwrap()
        }

        fn read(&self, file: &str) -> String {
            std::fs::read_to_string(self.dir.path().join("out").join(file)).unwrap()
        }
    }

    #[test]
    fn vote_run_writes_artifacts() {
        let fx = Fixture::new();
        let cfg = fx.config("kind = \"vote\"\nn_min = 1", &["a", "b", "c"]);
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(
            fx.read("exp.txt"),
            "I like turtles .\nHe goes to school .\nThis is fine .\n"
        );
        let rows = fx.read("exp.result.tsv");
        assert_eq!(rows.lines().next(), Some(ResultRow::TSV_HEADER));
        assert_eq!(
            rows.lines().nth(1),
            Some("exp\tvote\t100.0\t100.0\t100.0\t3\t3\t3")
        );
        assert!(fx
            .read("exp.votes.tsv")
            .starts_with("sentence_index\tapplied\tskipped\n0\t1\t0\n"));
        assert_eq!(result.files.len(), 4);
    }

    #[test]
    fn single_system_vote_matches_its_own_score() {
        let fx = Fixture::new();
        let cfg = fx.config("kind = \"vote\"\nn_min = 0", &["c"]);
        let result = run_experiment(&cfg).unwrap();
        let inputs = load_inputs(&cfg).unwrap();
        let own = score_corpus(&inputs.systems[0], inputs.gold.as_ref().unwrap()).unwrap();
        assert_eq!(result.outcome.reports[0], own);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let fx = Fixture::new();
        for method in [
            "kind = \"oracle-rank\"",
            "kind = \"oracle-ensemble\"",
            "kind = \"rank-w\"\nscores = \"scores.tsv\"",
            "kind = \"llm-rank\"\nvariant = \"a\"\nruns = 4\nseed = 3\nbackend = { mock = \"lexmin\" }",
        ] {
            let cfg = fx.config(method, &["a", "b", "c"]);
            let first = run_experiment(&cfg).unwrap();
            let snapshot: Vec<Vec<u8>> = first.files.iter().map(|p| std::fs::read(p).unwrap()).collect();
            let second = run_experiment(&cfg).unwrap();
            assert_eq!(first.files, second.files);
            for (p, before) in second.files.iter().zip(snapshot) {
                assert_eq!(std::fs::read(p).unwrap(), before, "{}", p.display());
            }
        }
    }

    #[test]
    fn oracle_ensemble_precision_is_perfect() {
        let fx = Fixture::new();
        let cfg = fx.config("kind = \"oracle-ensemble\"", &["b", "c"]);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.outcome.rows[0].precision, 100.0);
        assert!(fx
            .read("exp.audit.tsv")
            .starts_with("sentence_index\tmethod"));
    }

    #[test]
    fn llm_rank_writes_per_run_files_and_summary() {
        let fx = Fixture::new();
        let cfg = fx.config(
            "kind = \"llm-rank\"\nvariant = \"b\"\nseeds = [1, 2]\nbackend = { mock = \"lexmin\" }",
            &["a", "b", "c"],
        );
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.outcome.outputs.len(), 2);
        assert_eq!(fx.read("exp.run0.txt"), fx.read("exp.run1.txt"));
        let summary = fx.read("exp.summary.tsv");
        assert!(summary.starts_with(RunSummary::TSV_HEADER));
        assert!(summary.lines().nth(1).unwrap().starts_with("2\t"));
        assert_eq!(r.outcome.summary.unwrap().f05.two_std, 0.0);
    }

    #[test]
    fn aggr_rank_and_cluster() {
        let fx = Fixture::new();
        let cfg = fx.config("kind = \"aggr-rank\"", &["b", "a"]);
        let r = run_experiment(&cfg).unwrap();
        // b edits fewer spans than a in sentence 1 only.
        assert_eq!(r.outcome.outputs[0].sentences[1], s("He goes to school"));
        assert!(run_experiment(&fx.config("kind = \"aggr-rank\"", &["a", "b", "c"])).is_err());

        let mut cfg = fx.config("kind = \"cluster\"\nthreshold = 0.11", &["a", "b", "c"]);
        cfg.gold = None;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.outcome.rows.is_empty());
        assert!(fx
            .read("exp.clusters.tsv")
            .starts_with("system\tcluster\trepresentative\n"));
    }

    #[test]
    fn validation_errors() {
        let fx = Fixture::new();
        let err = |cfg: ExperimentConfig| run_experiment(&cfg).unwrap_err();
        assert!(err(fx.config("kind = \"vote\"\nn_min = 4", &["a", "b", "c"])).is_validation());
        assert!(err(fx.config("kind = \"vote\"\nn_min = 1", &["a", "missing"])).is_validation());
        assert!(err(fx.config("kind = \"vote\"\nn_min = 1", &["a", "a"])).is_validation());
        assert!(err(fx.config(
            "kind = \"llm-rank\"\nvariant = \"a\"\nbackend = { mock = \"gpt\" }",
            &["a", "b"]
        ))
        .is_validation());
        assert!(ExperimentConfig::parse("name = 1", fx.dir.path()).is_err());
        assert!(ExperimentConfig::parse(
            "name = \"x\"\noutput_dir = \"o\"\nsystems = []\n[method]\nkind = \"telepathy\"",
            fx.dir.path()
        )
        .is_err());
    }

    #[test]
    fn misaligned_system_is_reported() {
        let fx = Fixture::new();
        std::fs::write(fx.dir.path().join("short.txt"), "one line\n").unwrap();
        let cfg = fx.config("kind = \"vote\"\nn_min = 0", &["a", "short"]);
        match run_experiment(&cfg).unwrap_err() {
            Error::LengthMismatch {
                expected, found, ..
            } => assert_eq!((expected, found), (3, 1)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ablation_covers_each_member() {
        let fx = Fixture::new();
        let cfg = fx.config("kind = \"vote\"\nn_min = 1", &["a", "b", "c"]);
        let (rows, path) = ablation_remove_one(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].left_out, None);
        let names: Vec<_> = rows[1..]
            .iter()
            .map(|r| r.left_out.clone().unwrap())
            .collect();
        assert_eq!(names, ["a", "b", "c"]);
        let table = std::fs::read_to_string(path).unwrap();
        assert!(table.contains("exp w/o b\tvote"));
        assert!(
            ablation_remove_one(&fx.config("kind = \"vote\"\nn_min = 1", &["a", "b"])).is_err()
        );
    }

    #[test]
    fn applied_edits_shrink_as_n_min_grows() {
        let fx = Fixture::new();
        let inputs =
            load_inputs(&fx.config("kind = \"vote\"\nn_min = 0", &["a", "b", "c"])).unwrap();
        let sweep = sweep_n_min(&inputs, &[0, 1, 2, 3]).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].1.totals.n_proposed <= w[0].1.totals.n_proposed);
        }
        assert_eq!(sweep[3].1.totals.n_proposed, 0);
    }
}
