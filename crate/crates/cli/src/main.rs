use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gec_core::corpus::{
    load_parallel, read_m2, read_sentences, serialize_m2, write_sentences, GoldSentence, ScoreFile,
    SystemOutput, TokenSentence,
};
use gec_core::experiment::{
    ablation_remove_one, load_inputs, rows_tsv, run_experiment, sweep_n_min, ExperimentConfig,
    Method, ResultRow,
};
use gec_core::io::write_atomic;
use gec_core::llm::{
    llm_rank_corpus, run_seeds, summarize_runs, ChatBackend, HttpBackend, HttpConfig,
    LlmRankOptions, MockBackend, RankVariant, RetryPolicy, RunSummary,
};
use gec_core::oracle::{audit_tsv, oracle_ensemble_corpus, oracle_rank_corpus};
use gec_core::ranking::{aggr_rank_corpus, cluster_systems, rank_corpus, rank_weighted_corpus};
use gec_core::scoring::score_corpus;
use gec_core::voting::majority_vote_corpus_detailed;
use gec_core::{extract_edits, Error};

/// Combine and evaluate grammatical error correction system outputs.
#[derive(Debug, Parser)]
#[command(name = "gec", version)]
struct Cli {
    /// Worker threads for per-sentence work [default: available cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Master seed for every stochastic choice.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract edits from parallel text and write them as M2.
    Extract {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Output M2 file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one annotator's edits from an M2 file.
    Apply {
        #[arg(long)]
        edits: PathBuf,
        #[arg(long, default_value_t = 0)]
        annotator: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a hypothesis against M2 gold.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Source sentences, checked against the gold sources.
        #[arg(long)]
        src: Option<PathBuf>,
        /// Print TSV instead of a table.
        #[arg(long)]
        tsv: bool,
    },
    /// Majority vote over edits of several systems.
    Vote {
        #[arg(long)]
        src: PathBuf,
        #[command(flatten)]
        systems: Systems,
        #[arg(long = "nmin")]
        n_min: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gold-informed union of member edits.
    OracleEnsemble(OracleArgs),
    /// Gold-informed choice of the best member output.
    OracleRank(OracleArgs),
    /// Pick the highest-scored candidate per sentence.
    Rank(RankArgs),
    /// Like `rank`, with scores weighted by output frequency.
    RankW(RankArgs),
    /// Prefer the primary output only when it edits fewer, but some, spans.
    AggrRank {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        alternative: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster systems by TF-IDF similarity of their outputs.
    Cluster {
        #[command(flatten)]
        systems: Systems,
        #[arg(long, default_value_t = 0.11)]
        threshold: f64,
        /// Directory for the matrix, dendrogram and cluster files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rank candidates with a chat model, one output per run.
    LlmRank(LlmArgs),
    /// Run an experiment described by a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Also run the leave-one-system-out ablation.
        #[arg(long)]
        ablation: bool,
        /// Comma-separated n_min values to sweep (vote methods).
        #[arg(long, value_delimiter = ',')]
        sweep_nmin: Vec<usize>,
    },
}

#[derive(Debug, Args)]
struct Systems {
    /// System output, as `path` or `name=path`. Repeat per system.
    #[arg(long = "sys", required = true)]
    sys: Vec<String>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    gold: PathBuf,
    #[command(flatten)]
    systems: Systems,
    #[arg(long)]
    out: PathBuf,
    /// Per-sentence decision log.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    systems: Systems,
    /// TSV with `system`, `sentence_index`, `score` columns.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LlmArgs {
    #[arg(long)]
    src: PathBuf,
    #[command(flatten)]
    systems: Systems,
    #[arg(long, default_value = "a")]
    variant: RankVariant,
    #[arg(long, default_value_t = 4)]
    runs: usize,
    /// Offline backend: `lexmin`, `first` or `label:<A-Z>`.
    #[arg(long, conflicts_with = "endpoint")]
    mock: Option<MockBackend>,
    /// Base URL of a chat-completions API.
    #[arg(long, requires = "model")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    token_env: String,
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    /// Score each run and report mean ± 2 std.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Writes `run<k>.txt` and `run<k>.audit.tsv` per run.
    #[arg(long)]
    out_dir: PathBuf,
}

/// An error caused by bad input rather than a failure while running.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|cause| {
        cause.is::<Invalid>()
            || cause
                .downcast_ref::<Error>()
                .is_some_and(Error::is_validation)
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Extract { src, hyp, out } => extract(&src, &hyp, out.as_deref()),
        Command::Apply {
            edits,
            annotator,
            out,
        } => apply(&edits, annotator, &out),
        Command::Score {
            hyp,
            gold,
            src,
            tsv,
        } => score(&hyp, &gold, src.as_deref(), tsv),
        Command::Vote {
            src,
            systems,
            n_min,
            out,
        } => {
            let sources = sentences(&src)?;
            let outputs = load_systems(&systems, sources.len())?;
            if n_min > outputs.len() {
                return Err(invalid(format!(
                    "--nmin {n_min} exceeds the number of systems ({})",
                    outputs.len()
                )));
            }
            let (output, _) = majority_vote_corpus_detailed(&sources, &outputs, n_min)?;
            write_sentences(&out, &output.sentences)?;
            Ok(())
        }
        Command::OracleEnsemble(args) => oracle(args, true),
        Command::OracleRank(args) => oracle(args, false),
        Command::Rank(args) => rank(args, false),
        Command::RankW(args) => rank(args, true),
        Command::AggrRank {
            src,
            primary,
            alternative,
            out,
        } => {
            let sources = sentences(&src)?;
            let p = load_system(&primary.display().to_string(), sources.len())?;
            let a = load_system(&alternative.display().to_string(), sources.len())?;
            let output = aggr_rank_corpus(&sources, &p, &a)?;
            write_sentences(&out, &output.sentences)?;
            Ok(())
        }
        Command::Cluster {
            systems,
            threshold,
            out_dir,
        } => cluster(&systems, threshold, out_dir.as_deref()),
        Command::LlmRank(args) => llm_rank(args, seed.unwrap_or(0)),
        Command::Experiment {
            config,
            ablation,
            sweep_nmin,
        } => experiment(&config, ablation, &sweep_nmin, seed),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn sentences(path: &Path) -> Result<Vec<TokenSentence>> {
    require_file(path)?;
    Ok(read_sentences(path)?)
}

fn gold(path: &Path) -> Result<Vec<GoldSentence>> {
    require_file(path)?;
    Ok(read_m2(path)?)
}

fn load_system(spec: &str, expected: usize) -> Result<SystemOutput> {
    let (name, path) = match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (Some(name), Path::new(path)),
        _ => (None, Path::new(spec)),
    };
    require_file(path)?;
    let mut out = load_parallel(path, expected)?;
    if let Some(name) = name {
        out.name = name.to_owned();
    }
    Ok(out)
}

fn load_systems(systems: &Systems, expected: usize) -> Result<Vec<SystemOutput>> {
    let outputs = systems
        .sys
        .iter()
        .map(|s| load_system(s, expected))
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(invalid(format!(
            "duplicate system name `{}`; use name=path",
            w[0]
        )));
    }
    Ok(outputs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .context("writing to stdout")?;
    Ok(())
}

fn extract(src: &Path, hyp: &Path, out: Option<&Path>) -> Result<()> {
    let sources = sentences(src)?;
    let hyps = load_system(&hyp.display().to_string(), sources.len())?;
    let gold = sources
        .iter()
        .zip(&hyps.sentences)
        .map(|(s, h)| GoldSentence::single(s.clone(), extract_edits(s, h)))
        .collect::<gec_core::Result<Vec<_>>>()?;
    let m2 = serialize_m2(&gold);
    match out {
        Some(path) => Ok(write_atomic(path, &m2)?),
        None => stdout(&String::from_utf8(m2).expect("M2 output is UTF-8")),
    }
}

fn apply(edits: &Path, annotator: usize, out: &Path) -> Result<()> {
    let gold = gold(edits)?;
    let corrected = gold
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let k = g
                .annotations()
                .iter()
                .position(|a| a.annotator == annotator)
                .ok_or_else(|| {
                    invalid(format!("sentence {i}: no edits from annotator {annotator}"))
                })?;
            Ok(g.corrected(k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(write_sentences(out, &corrected)?)
}

fn score(hyp: &Path, gold_path: &Path, src: Option<&Path>, tsv: bool) -> Result<()> {
    let gold = gold(gold_path)?;
    if let Some(src) = src {
        let sources = sentences(src)?;
        if sources.len() != gold.len() {
            return Err(Error::LengthMismatch {
                path: src.to_path_buf(),
                expected: gold.len(),
                found: sources.len(),
            }
            .into());
        }
        if let Some(i) = (0..gold.len()).find(|&i| sources[i] != *gold[i].source()) {
            return Err(invalid(format!(
                "sentence {i}: source differs from the gold source"
            )));
        }
    }
    let hyp = load_system(&hyp.display().to_string(), gold.len())?;
    let report = score_corpus(&hyp, &gold)?;
    stdout(&if tsv {
        report.to_tsv()
    } else {
        report.to_table()
    })
}

fn oracle(args: OracleArgs, ensemble: bool) -> Result<()> {
    let gold = gold(&args.gold)?;
    let outputs = load_systems(&args.systems, gold.len())?;
    let (output, choices) = if ensemble {
        oracle_ensemble_corpus(&outputs, &gold)?
    } else {
        oracle_rank_corpus(&outputs, &gold)?
    };
    write_sentences(&args.out, &output.sentences)?;
    if let Some(audit) = &args.audit {
        write_text(audit, &audit_tsv(&choices))?;
    }
    Ok(())
}

fn rank(args: RankArgs, weighted: bool) -> Result<()> {
    require_file(&args.scores)?;
    let scores = ScoreFile::read(&args.scores)?;
    let first = args
        .systems
        .sys
        .first()
        .ok_or_else(|| invalid("no systems"))?;
    let first_path = first.split_once('=').map_or(first.as_str(), |(_, p)| p);
    let expected = sentences(Path::new(first_path))?.len();
    let outputs = load_systems(&args.systems, expected)?;
    let output = if weighted {
        rank_weighted_corpus(&outputs, &scores)?
    } else {
        rank_corpus(&outputs, &scores)?
    };
    Ok(write_sentences(&args.out, &output.sentences)?)
}

fn cluster(systems: &Systems, threshold: f64, out_dir: Option<&Path>) -> Result<()> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(invalid(format!("bad --threshold {threshold}")));
    }
    let first = &systems.sys[0];
    let first_path = first.split_once('=').map_or(first.as_str(), |(_, p)| p);
    let expected = sentences(Path::new(first_path))?.len();
    let outputs = load_systems(systems, expected)?;
    let clustering = cluster_systems(&outputs, threshold)?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("similarity.tsv"), &clustering.matrix.to_tsv())?;
        write_text(&dir.join("dendrogram.tsv"), &clustering.dendrogram_tsv())?;
        write_text(&dir.join("clusters.tsv"), &clustering.report_tsv())?;
    }
    stdout(&clustering.report_tsv())
}

fn llm_rank(args: LlmArgs, seed: u64) -> Result<()> {
    if args.runs == 0 {
        return Err(invalid("--runs must be at least 1"));
    }
    let backend: Box<dyn ChatBackend> = match (&args.mock, &args.endpoint) {
        (Some(mock), _) => Box::new(*mock),
        (None, Some(endpoint)) => Box::new(HttpBackend::new(&HttpConfig {
            base_url: endpoint.clone(),
            model: args.model.clone().expect("clap enforces --model"),
            token_env: args.token_env.clone(),
            timeout_secs: args.timeout,
        })),
        (None, None) => return Err(invalid("choose a backend with --mock or --endpoint")),
    };
    let sources = sentences(&args.src)?;
    let outputs = load_systems(&args.systems, sources.len())?;
    if outputs.len() < 2 {
        return Err(invalid("llm-rank needs at least 2 systems"));
    }
    let gold = args.gold.as_deref().map(gold).transpose()?;
    let options = LlmRankOptions {
        variant: args.variant,
        retry: RetryPolicy::default(),
        ..LlmRankOptions::default()
    };
    let runs = llm_rank_corpus(
        &sources,
        &outputs,
        &run_seeds(seed, args.runs),
        &*backend,
        &options,
    )?;
    let mut reports = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        write_sentences(
            args.out_dir.join(format!("run{r}.txt")),
            &run.output.sentences,
        )?;
        write_text(
            &args.out_dir.join(format!("run{r}.audit.tsv")),
            &run.audit_tsv(),
        )?;
        let flagged = run.flagged();
        if flagged > 0 {
            eprintln!("run {r}: {flagged} sentence(s) fell back to a default choice");
        }
        if let Some(gold) = &gold {
            reports.push(score_corpus(&run.output, gold)?);
        }
    }
    if gold.is_some() {
        let rows: Vec<ResultRow> = reports
            .iter()
            .enumerate()
            .map(|(r, rep)| ResultRow::new(format!("run{r}"), "llm-rank", rep))
            .collect();
        write_text(&args.out_dir.join("result.tsv"), &rows_tsv(&rows))?;
        let summary = summarize_runs(&reports)?;
        let text = format!("{}\n{}\n", RunSummary::TSV_HEADER, summary.tsv_row());
        write_text(&args.out_dir.join("summary.tsv"), &text)?;
        stdout(&format!(
            "P {}\nR {}\nF0.5 {}\n",
            summary.precision, summary.recall, summary.f05
        ))?;
    }
    Ok(())
}

fn experiment(path: &Path, ablation: bool, sweep: &[usize], seed: Option<u64>) -> Result<()> {
    require_file(path)?;
    let mut config = ExperimentConfig::load(path)?;
    if let (
        Some(s),
        Method::LlmRank {
            seed, seeds: None, ..
        },
    ) = (seed, &mut config.method)
    {
        *seed = s;
    }
    let result = run_experiment(&config)?;
    let mut out = String::new();
    if !result.outcome.rows.is_empty() {
        out.push_str(&rows_tsv(&result.outcome.rows));
    }
    if let Some(summary) = &result.outcome.summary {
        out.push_str(&format!(
            "{}\n{}\n",
            RunSummary::TSV_HEADER,
            summary.tsv_row()
        ));
    }
    for f in &result.files {
        eprintln!("wrote {}", f.display());
    }
    if ablation {
        let (rows, table) = ablation_remove_one(&config)?;
        let rows: Vec<ResultRow> = rows.iter().map(|r| r.result_row(&config)).collect();
        out.push_str(&rows_tsv(&rows));
        eprintln!("wrote {}", table.display());
    }
    if !sweep.is_empty() {
        if !matches!(
            config.method,
            Method::Vote { .. } | Method::SecondOrderVote { .. }
        ) {
            return Err(invalid("--sweep-nmin applies to vote methods only"));
        }
        let inputs = load_inputs(&config)?;
        if let Some(&bad) = sweep.iter().find(|&&n| n > inputs.systems.len()) {
            return Err(invalid(format!(
                "n_min {bad} exceeds the number of systems"
            )));
        }
        let rows: Vec<ResultRow> = sweep_n_min(&inputs, sweep)?
            .iter()
            .map(|(n, rep)| {
                ResultRow::new(
                    format!("{} n_min={n}", config.name),
                    config.method.label(),
                    rep,
                )
            })
            .collect();
        let text = rows_tsv(&rows);
        write_text(&config.output_path(".sweep.tsv"), &text)?;
        out.push_str(&text);
    }
    stdout(&out)
}
