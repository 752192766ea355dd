//! The `vidpanel` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use tracing::info;

use vidpanel_core::agents::{AgentBackend, AgentProfile, BackendKind, BackendRouter};
use vidpanel_core::domain::{Answer, QaTask};
use vidpanel_core::harness::{gather_selection_answers, transcript_of, EvalReport, SimReport, SimSpec};
use vidpanel_core::longvr::{
    corpus_stats, exclude_reviewed, filter_caption, filter_duration, rewrite_caption, segment_all,
    AgentRewriter, CaptionRewriter, ClipRecord, IdentityRewriter, WhitespaceTokenizer,
    DEFAULT_CAPTION_BUDGET, MIN_CAPTION_TOKENS,
};
use vidpanel_core::orchestrator::{RunConfig, TerminalPolicy};
use vidpanel_core::perception::{HashScorer, SimilarityScorer};
use vidpanel_core::selection::{rank_agents, sample_subset, AnswerTable, DEFAULT_SUBSET_SIZE, DEFAULT_TEAM_SIZE};

use crate::goldens;
use crate::io::{self, ConfigFile, IoError, JudgeChoice, Library, ScorerKind, TeamFile};
use crate::parallel::{evaluate_parallel, simulate_parallel, Concurrent};
use crate::remote::{RemoteBackend, RemoteScorer, RetryPolicy};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "vidpanel", version, about = "Multi-agent long-video question answering runner")]
pub struct Cli {
    /// Log verbosity on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank the agent library by pseudo-label agreement and pick a team.
    Select(SelectArgs),
    /// Run the protocol on every task of a manifest (alias of `eval`).
    Run(EvalArgs),
    /// Run the protocol on every task of a manifest and report accuracy.
    Eval(EvalArgs),
    /// Monte Carlo simulation with synthetic agents of known accuracy.
    Simulate(SimulateArgs),
    /// Build a filtered clip-caption corpus.
    LongvrPrep(LongvrArgs),
    /// Print every prompt template and compare with the goldens.
    RenderPrompts(RenderArgs),
}

#[derive(Debug, Args)]
pub struct Concurrency {
    /// Sessions (or trials) in flight at once.
    #[arg(long, default_value_t = 1)]
    pub parallel_sessions: usize,
    /// Agent calls in flight at once within a stage.
    #[arg(long, default_value_t = 1)]
    pub parallel_agents: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Agent library (TOML).
    #[arg(long)]
    pub agents: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SUBSET_SIZE)]
    pub subset_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TEAM_SIZE)]
    pub team_size: usize,
    /// Run config (TOML) for perception and scorer settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub concurrency: Concurrency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Agent library (TOML).
    #[arg(long)]
    pub agents: PathBuf,
    /// Team file written by `select`, or comma-separated agent ids.
    #[arg(long)]
    pub team: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One JSONL transcript per session is written here.
    #[arg(long)]
    pub transcripts_dir: Option<PathBuf>,
    /// Overrides the config's subtitle setting.
    #[arg(long, value_enum)]
    pub subtitles: Option<OnOff>,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record per-session wall time in the report.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub concurrency: Concurrency,
}

/// Comma-separated probabilities, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Probabilities(pub Vec<f64>);

fn probability_list(s: &str) -> Result<Probabilities, String> {
    let ps: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    if let Some(bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability {bad} is outside [0, 1]"));
    }
    if ps.is_empty() {
        return Err("at least one probability is required".into());
    }
    Ok(Probabilities(ps))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Per-agent answer accuracies, comma separated.
    #[arg(long, value_parser = probability_list)]
    pub agents: Probabilities,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = JudgeChoice::Banded)]
    pub judge: JudgeChoice,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub options: u8,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_rounds: u32,
    #[arg(long, default_value = "dynamic")]
    pub policy: TerminalPolicy,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Writes every trial's events to one JSONL file.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub parallel_sessions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RewriterChoice {
    Identity,
    Agent,
}

#[derive(Debug, Args)]
pub struct LongvrArgs {
    /// Directory of per-source `*.jsonl` clip listings.
    #[arg(long)]
    pub listings: PathBuf,
    /// Kept corpus (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus statistics (JSON).
    #[arg(long)]
    pub stats: PathBuf,
    /// Every record with its final status (JSONL).
    #[arg(long)]
    pub all_out: Option<PathBuf>,
    #[arg(long, default_value_t = MIN_CAPTION_TOKENS)]
    pub min_tokens: usize,
    /// Clip ids excluded after manual review, one per line.
    #[arg(long)]
    pub reviewed: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RewriterChoice::Identity)]
    pub rewriter: RewriterChoice,
    /// Agent library holding the rewriter agent.
    #[arg(long, required_if_eq("rewriter", "agent"))]
    pub agents: Option<PathBuf>,
    #[arg(long, required_if_eq("rewriter", "agent"))]
    pub rewriter_agent: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CAPTION_BUDGET)]
    pub budget: usize,
    #[command(flatten)]
    pub concurrency: Concurrency,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Also write each rendered template to `<dir>/<name>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare against goldens in this directory instead of the embedded copies.
    #[arg(long)]
    pub goldens: Option<PathBuf>,
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(m: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn data(m: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: m.to_string(),
        }
    }

    fn backend(m: impl ToString) -> Self {
        Self {
            code: EXIT_BACKEND,
            message: m.to_string(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Read { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("VIDPANEL_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

pub fn run(command: Command, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    match command {
        Command::Select(a) => select(a, out),
        Command::Run(a) | Command::Eval(a) => eval(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::LongvrPrep(a) => longvr(a, out),
        Command::RenderPrompts(a) => render(a, out),
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))
}

fn config_file(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    Ok(match path {
        Some(p) => io::load_config(p)?,
        None => ConfigFile::default(),
    })
}

fn backend_for(lib: &Library, agents: &[AgentProfile], run: &RunConfig, parallel_agents: usize) -> Concurrent<BackendRouter> {
    let remote = agents.iter().any(|a| a.backend == BackendKind::Remote).then(|| {
        let retry = RetryPolicy {
            attempts: run.retry_attempts,
            ..RetryPolicy::default()
        };
        Box::new(RemoteBackend::new(retry, parallel_agents.max(1), Duration::from_secs(120)))
            as Box<dyn AgentBackend + Send>
    });
    Concurrent {
        inner: BackendRouter {
            scripted: lib.scripted.clone(),
            stochastic: Some(lib.stochastic.clone()),
            remote,
        },
        max_agents: parallel_agents.max(1),
    }
}

fn scorer_for(cfg: &ConfigFile) -> Result<Box<dyn SimilarityScorer>, CliError> {
    Ok(match cfg.scorer.kind {
        ScorerKind::Hash => Box::new(HashScorer { seed: cfg.scorer.seed }),
        ScorerKind::Keyword => {
            let path = cfg
                .scorer
                .keywords
                .as_deref()
                .ok_or_else(|| CliError::data("scorer.kind = \"keyword\" needs scorer.keywords"))?;
            Box::new(io::load_keywords(path)?)
        }
        ScorerKind::Remote => {
            let url = cfg
                .scorer
                .url
                .as_deref()
                .ok_or_else(|| CliError::data("scorer.kind = \"remote\" needs scorer.url"))?;
            Box::new(RemoteScorer::new(url, Duration::from_secs(60)))
        }
    })
}

fn select(a: SelectArgs, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    let tasks = io::load_manifest(&a.manifest)?;
    let lib = io::load_library(&a.agents)?;
    let cfg = config_file(a.config.as_deref())?;
    if a.team_size == 0 {
        return Err(CliError::usage("--team-size must be at least 1"));
    }
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let subset = sample_subset(&ids, a.subset_size, a.seed).map_err(CliError::usage)?;
    let chosen: Vec<&QaTask> = subset
        .task_ids
        .iter()
        .filter_map(|id| tasks.iter().find(|t| &t.task_id == id))
        .collect();
    let backend = backend_for(&lib, &lib.agents, &cfg.run, a.concurrency.parallel_agents);
    let scorer = scorer_for(&cfg)?;
    let run = RunConfig {
        seed: a.seed,
        ..cfg.run.clone()
    };
    let tables: Vec<_> = rayon::ThreadPoolBuilder::new()
        .num_threads(a.concurrency.parallel_sessions.max(1))
        .build()
        .map_err(CliError::data)?
        .install(|| {
            chosen
                .par_iter()
                .map(|t| gather_selection_answers(&[*t], &lib.agents, &run, &backend, scorer.as_ref()))
                .collect()
        });
    let mut table = AnswerTable {
        agent_ids: lib.agents.iter().map(|x| x.agent_id.clone()).collect(),
        rows: Vec::new(),
    };
    for t in tables {
        table.rows.extend(t.map_err(CliError::backend)?.rows);
    }
    let mut invalid: BTreeMap<String, usize> = table.agent_ids.iter().map(|id| (id.clone(), 0)).collect();
    for (_, row) in &table.rows {
        for (id, ans) in table.agent_ids.iter().zip(row) {
            if *ans == Answer::Invalid {
                *invalid.get_mut(id).expect("agent listed") += 1;
            }
        }
    }
    let report = rank_agents(&table, a.team_size).map_err(CliError::data)?;
    let team = TeamFile::new(report, subset, invalid);
    io::write_json(&a.out, &team)?;
    let mut s = String::new();
    let _ = writeln!(s, "rank  agent  accuracy  invalid");
    for (i, id) in team.team.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<4}  {id}  {:.4}  {}",
            i + 1,
            team.accuracies.get(id).copied().unwrap_or(0.0),
            team.invalid_answers.get(id).copied().unwrap_or(0)
        );
    }
    for (id, n) in team.invalid_answers.iter().filter(|(_, n)| **n > 0) {
        tracing::warn!(agent = %id, invalid = n, "agent produced no valid answer on some subset tasks");
    }
    emit(out, &s)?;
    Ok(EXIT_OK)
}

fn team_profiles(spec: &str, lib: &Library) -> Result<Vec<AgentProfile>, CliError> {
    let path = Path::new(spec);
    let (ids, acc) = if path.exists() {
        let t = io::load_team(path)?;
        (t.team, t.accuracies)
    } else if spec.ends_with(".json") {
        return Err(CliError::usage(format!("team file `{spec}` does not exist")));
    } else {
        (spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(), BTreeMap::new())
    };
    if ids.is_empty() {
        return Err(CliError::usage("team is empty"));
    }
    ids.iter()
        .map(|id| {
            let mut p = lib
                .get(id)
                .cloned()
                .ok_or_else(|| CliError::data(format!("team agent `{id}` is not in the library")))?;
            if let Some(&s) = acc.get(id) {
                p.selection_accuracy = Some(s);
            }
            Ok(p)
        })
        .collect()
}

fn eval_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let opt = |l: Option<vidpanel_core::domain::OptionLetter>| l.map_or("-".to_string(), |l| l.to_string());
    let _ = writeln!(s, "task  answer  gold  round  frames  status");
    for t in &report.tasks {
        let status = match (&t.error, t.correct()) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(true)) => "correct".into(),
            (None, Some(false)) => "wrong".into(),
            (None, None) => "ungraded".into(),
        };
        let _ = writeln!(
            s,
            "{}  {}  {}  {}  {:.1}  {status}",
            t.task_id,
            opt(t.answer),
            opt(t.gold),
            t.round_decided.map_or("-".into(), |r| r.to_string()),
            t.mean_frames
        );
    }
    match report.accuracy {
        Some(acc) => {
            let _ = writeln!(s, "accuracy: {acc:.4} ({}/{})", report.correct, report.graded);
        }
        None => {
            let _ = writeln!(s, "accuracy: n/a (no gold answers)");
        }
    }
    let hist: Vec<String> = report
        .round_histogram
        .iter()
        .enumerate()
        .map(|(i, n)| format!("r{}={n}", i + 1))
        .collect();
    let _ = writeln!(s, "decided: {} errored={}", hist.join(" "), report.errored);
    let _ = writeln!(s, "mean frames: {:.2}", report.mean_frames);
    if let Some(ms) = report.mean_wall_ms {
        let _ = writeln!(s, "mean wall time: {ms:.1} ms");
    }
    s
}

fn eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    let tasks = io::load_manifest(&a.manifest)?;
    let lib = io::load_library(&a.agents)?;
    let mut cfg = config_file(a.config.as_deref())?;
    if let Some(s) = a.subtitles {
        cfg.run.subtitles = s == OnOff::On;
    }
    let team = team_profiles(&a.team, &lib)?;
    let backend = backend_for(&lib, &team, &cfg.run, a.concurrency.parallel_agents);
    let scorer = scorer_for(&cfg)?;
    let (report, sessions) = evaluate_parallel(
        &tasks,
        &team,
        &cfg.run,
        &backend,
        scorer.as_ref(),
        a.concurrency.parallel_sessions,
        a.timing,
    )
    .map_err(CliError::data)?;
    if let Some(dir) = &a.transcripts_dir {
        for (t, s) in tasks.iter().zip(&sessions) {
            io::write_transcript(dir, &t.task_id, transcript_of(s))?;
        }
        info!(dir = %dir.display(), sessions = sessions.len(), "transcripts written");
    }
    if let Some(p) = &a.out {
        io::write_json(p, &report)?;
    }
    emit(out, &eval_table(&report))?;
    for s in sessions.iter().filter_map(|s| s.as_ref().err()) {
        eprintln!("session failed: {s}");
    }
    Ok(if report.errored > 0 { EXIT_BACKEND } else { EXIT_OK })
}

fn sim_table(r: &SimReport) -> String {
    let mut s = String::new();
    let rows: [(&str, String); 10] = [
        ("trials", r.trials.to_string()),
        ("round-1 consensus", format!("{:.4}", r.round1_consensus_rate)),
        ("round-1 consensus correct", format!("{:.4}", r.round1_consensus_correct_rate)),
        ("round-1 wrong consensus", format!("{:.4}", r.round1_wrong_consensus_rate)),
        ("round-1 plurality accuracy", format!("{:.4}", r.round1_plurality_accuracy)),
        ("final accuracy", format!("{:.4} ± {:.4}", r.final_accuracy, r.final_accuracy_se)),
        (
            "elimination correctness",
            r.elimination_correctness.map_or("n/a".into(), |e| format!("{e:.4}")),
        ),
        ("eliminations", format!("{} ({} with a wrong agent)", r.eliminations, r.eliminations_with_wrong_agent)),
        (
            "stopped at round",
            r.stop_histogram
                .iter()
                .enumerate()
                .map(|(i, n)| format!("r{}={n}", i + 1))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        ("mean frames", format!("{:.2}", r.mean_frames)),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<28} {v}");
    }
    s
}

fn simulate(a: SimulateArgs, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    let accuracies = a.agents.0;
    let mut spec = SimSpec::new(accuracies, a.trials, a.seed);
    spec.option_count = usize::from(a.options);
    spec.judge = a.judge.model();
    spec.config.max_rounds = a.max_rounds;
    spec.config.terminal_policy = a.policy;
    spec.config.seed = a.seed;
    spec.keep_transcripts = a.transcripts.is_some();
    spec.validate().map_err(CliError::usage)?;
    let (report, trials) = simulate_parallel(&spec, a.parallel_sessions).map_err(CliError::usage)?;
    if let Some(p) = &a.transcripts {
        let events = trials.iter().flat_map(|t| t.transcript.iter().flatten());
        io::write_jsonl(p, events)?;
    }
    if let Some(p) = &a.out {
        io::write_json(p, &report)?;
    }
    emit(out, &sim_table(&report))?;
    Ok(EXIT_OK)
}

fn longvr(a: LongvrArgs, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    let sources = io::load_listings_dir(&a.listings)?;
    let tok = WhitespaceTokenizer;
    let clips = segment_all(&sources, &tok).map_err(CliError::data)?;
    let reviewed = match &a.reviewed {
        Some(p) => io::load_id_list(p)?,
        None => Default::default(),
    };
    let lib;
    let backend;
    let rewriter: Box<dyn CaptionRewriter> = match a.rewriter {
        RewriterChoice::Identity => Box::new(IdentityRewriter),
        RewriterChoice::Agent => {
            let path = a.agents.as_deref().ok_or_else(|| CliError::usage("--agents is required"))?;
            let id = a.rewriter_agent.as_deref().ok_or_else(|| CliError::usage("--rewriter-agent is required"))?;
            lib = io::load_library(path)?;
            let agent = lib
                .get(id)
                .cloned()
                .ok_or_else(|| CliError::data(format!("rewriter agent `{id}` is not in the library")))?;
            backend = backend_for(&lib, std::slice::from_ref(&agent), &RunConfig::default(), a.concurrency.parallel_agents);
            Box::new(AgentRewriter {
                backend: &backend,
                agent,
                budget_words: a.budget,
            })
        }
    };
    let clips = filter_duration(clips);
    let clips: Vec<ClipRecord> = rayon::ThreadPoolBuilder::new()
        .num_threads(a.concurrency.parallel_sessions.max(1))
        .build()
        .map_err(CliError::data)?
        .install(|| {
            clips
                .into_par_iter()
                .map(|c| rewrite_caption(c, rewriter.as_ref(), &tok))
                .collect()
        });
    let clips = filter_caption(clips, a.min_tokens, &tok);
    let clips = exclude_reviewed(clips, &reviewed);
    let stats = corpus_stats(&clips);
    io::write_jsonl(&a.out, clips.iter().filter(|c| c.status.is_kept()))?;
    if let Some(p) = &a.all_out {
        io::write_jsonl(p, &clips)?;
    }
    io::write_json(&a.stats, &stats)?;
    let mut s = String::new();
    let _ = writeln!(s, "kept clips: {} of {}", stats.total_kept, clips.len());
    let fmt = |m: Option<f64>| m.map_or("n/a".into(), |v| format!("{v:.2}"));
    let _ = writeln!(s, "mean duration (s): {}", fmt(stats.mean_duration_s));
    let _ = writeln!(s, "mean caption tokens: {}", fmt(stats.mean_caption_tokens));
    for (src, n) in &stats.per_source {
        let _ = writeln!(s, "  {src}: {n}");
    }
    if stats.rewrite_failures > 0 {
        let _ = writeln!(s, "rewrite failures: {}", stats.rewrite_failures);
    }
    emit(out, &s)?;
    Ok(EXIT_OK)
}

fn render(a: RenderArgs, out: &mut dyn std::io::Write) -> Result<u8, CliError> {
    let checks = goldens::check_all(a.goldens.as_deref())?;
    let mut all = true;
    let mut s = String::new();
    for c in &checks {
        if let Some(dir) = &a.out {
            io::write_text(&dir.join(format!("{}.txt", c.name)), &c.rendered)?;
        }
        let verdict = match c.matches {
            Some(true) => "ok",
            Some(false) => "MISMATCH",
            None => "no golden",
        };
        all &= c.matches == Some(true);
        let _ = writeln!(s, "===== {} [{verdict}]", c.name);
        let _ = writeln!(s, "{}", c.rendered);
    }
    emit(out, &s)?;
    let _ = out.flush();
    Ok(if all { EXIT_OK } else { EXIT_DATA })
}
