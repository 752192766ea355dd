//! File formats: task manifests, fixtures, agent libraries, run configs, team files,
//! transcripts and clip listings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use vidpanel_core::agents::{
    validate_library, AgentProfile, FixtureRecord, JudgeModel, ScriptedBackend, StochasticBackend,
};
use vidpanel_core::domain::{validate_task, OptionLetter, QaTask, TaskOption, VideoRef};
use vidpanel_core::longvr::ClipListing;
use vidpanel_core::orchestrator::{RunConfig, TraceEvent};
use vidpanel_core::perception::KeywordScorer;
use vidpanel_core::selection::{PseudoLabel, SelectionReport, SelectionSubset};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    fn invalid(path: &Path, message: impl fmt::Display) -> Self {
        IoError::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    fn line(path: &Path, line: usize, message: impl fmt::Display) -> Self {
        IoError::Line {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::invalid(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let werr = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(werr)?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| IoError::invalid(path, e))?;
        writeln!(out, "{line}").map_err(werr)?;
    }
    out.flush().map_err(werr)
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Option list accepted as `{"A": "...", ...}` or `[{"key": "A", "text": "..."}]`.
/// Object keys are kept in file order, duplicates included, so validation can see them.
#[derive(Debug, Clone, PartialEq)]
struct OptionList(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OptionList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OptionList;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of letter -> text or a list of {key, text}")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<OptionList, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, String>()? {
                    out.push((k, v));
                }
                Ok(OptionList(out))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut s: A) -> Result<OptionList, A::Error> {
                #[derive(Deserialize)]
                struct Item {
                    key: String,
                    text: String,
                }
                let mut out = Vec::new();
                while let Some(Item { key, text }) = s.next_element()? {
                    out.push((key, text));
                }
                Ok(OptionList(out))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    task_id: String,
    video: VideoRef,
    question: String,
    options: OptionList,
    #[serde(default)]
    subtitles: Option<String>,
    #[serde(default)]
    gold_answer: Option<String>,
}

fn letter(s: &str) -> Option<OptionLetter> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => OptionLetter::from_char(c),
        _ => None,
    }
}

fn task_from_record(r: ManifestRecord) -> Result<QaTask, String> {
    let mut options = Vec::with_capacity(r.options.0.len());
    for (k, text) in r.options.0 {
        let key = letter(&k).ok_or_else(|| format!("option key `{k}` is not one of A-D"))?;
        options.push(TaskOption { key, text });
    }
    let gold_answer = match r.gold_answer.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(g) => Some(letter(g).ok_or_else(|| format!("gold answer `{g}` is not one of A-D"))?),
    };
    let task = QaTask {
        task_id: r.task_id,
        video: r.video,
        question: r.question,
        options,
        subtitles: r.subtitles.filter(|s| !s.is_empty()),
        gold_answer,
    };
    let violations = validate_task(&task);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(msgs.join("; "));
    }
    Ok(task)
}

/// Parses a JSONL task manifest; every error names its line.
pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<QaTask>, IoError> {
    let mut tasks: Vec<QaTask> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (n, line) in lines(text) {
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| IoError::line(path, n, e))?;
        let task = task_from_record(record).map_err(|e| IoError::line(path, n, e))?;
        if let Some(first) = seen.insert(task.task_id.clone(), n) {
            return Err(IoError::line(
                path,
                n,
                format!("duplicate task_id `{}` (first on line {first})", task.task_id),
            ));
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(IoError::invalid(path, "manifest has no tasks"));
    }
    Ok(tasks)
}

pub fn load_manifest(path: &Path) -> Result<Vec<QaTask>, IoError> {
    parse_manifest(path, &read_text(path)?)
}

pub fn parse_fixtures(path: &Path, text: &str) -> Result<ScriptedBackend, IoError> {
    let mut backend = ScriptedBackend::new();
    for (n, line) in lines(text) {
        let rec: FixtureRecord = serde_json::from_str(line).map_err(|e| IoError::line(path, n, e))?;
        backend.add_record(rec).map_err(|e| IoError::line(path, n, e))?;
    }
    Ok(backend)
}

pub fn load_fixtures(path: &Path) -> Result<ScriptedBackend, IoError> {
    parse_fixtures(path, &read_text(path)?)
}

/// Named judge models for simulated agents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum JudgeChoice {
    Oracle,
    #[default]
    Banded,
    Noisy,
}

impl JudgeChoice {
    pub fn model(self) -> JudgeModel {
        match self {
            JudgeChoice::Oracle => JudgeModel::oracle(),
            JudgeChoice::Banded => JudgeModel::banded(),
            JudgeChoice::Noisy => JudgeModel::noisy(),
        }
    }
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    #[serde(default)]
    pub judge: JudgeChoice,
    #[serde(default = "half")]
    pub watch_probability: f64,
}

impl Default for StochasticSection {
    fn default() -> Self {
        Self {
            judge: JudgeChoice::default(),
            watch_probability: half(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    #[serde(default)]
    fixtures: Option<PathBuf>,
    #[serde(default)]
    stochastic: StochasticSection,
    #[serde(default)]
    agents: Vec<AgentProfile>,
}

/// An agent library: profiles plus the local backends they need.
#[derive(Clone, Debug)]
pub struct Library {
    pub agents: Vec<AgentProfile>,
    pub scripted: Option<ScriptedBackend>,
    pub stochastic: StochasticBackend,
}

impl Library {
    pub fn get(&self, id: &str) -> Option<&AgentProfile> {
        self.agents.iter().find(|a| a.agent_id == id)
    }
}

/// Loads a TOML agent library. A `fixtures` path is resolved against the library's directory.
pub fn load_library(path: &Path) -> Result<Library, IoError> {
    let text = read_text(path)?;
    let file: LibraryFile = toml::from_str(&text).map_err(|e| IoError::invalid(path, e))?;
    if file.agents.is_empty() {
        return Err(IoError::invalid(path, "library lists no agents"));
    }
    let problems = validate_library(&file.agents);
    if !problems.is_empty() {
        return Err(IoError::invalid(path, problems.join("; ")));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let scripted = match file.fixtures {
        Some(f) => Some(load_fixtures(&base.join(f))?),
        None => None,
    };
    Ok(Library {
        agents: file.agents,
        scripted,
        stochastic: StochasticBackend {
            judge: file.stochastic.judge.model(),
            watch_probability: file.stochastic.watch_probability,
            ..StochasticBackend::default()
        },
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Hash,
    Keyword,
    Remote,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    #[serde(default)]
    pub kind: ScorerKind,
    #[serde(default)]
    pub seed: u64,
    /// JSON object `{video_id: [keywords per chunk]}` for the keyword scorer.
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    /// Endpoint of a remote similarity service.
    #[serde(default)]
    pub url: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
}

/// Loads a TOML run config; relative scorer paths resolve against the config's directory.
pub fn load_config(path: &Path) -> Result<ConfigFile, IoError> {
    let text = read_text(path)?;
    let mut cfg: ConfigFile = toml::from_str(&text).map_err(|e| IoError::invalid(path, e))?;
    cfg.run.validate().map_err(|e| IoError::invalid(path, e))?;
    if let Some(k) = &cfg.scorer.keywords {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.scorer.keywords = Some(base.join(k));
    }
    Ok(cfg)
}

pub fn load_keywords(path: &Path) -> Result<KeywordScorer, IoError> {
    let text = read_text(path)?;
    let chunks: BTreeMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| IoError::invalid(path, e))?;
    Ok(KeywordScorer { chunks })
}

/// Output of team selection and input to evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamFile {
    pub team: Vec<String>,
    pub accuracies: BTreeMap<String, f64>,
    pub subset: SelectionSubset,
    pub labels: Vec<PseudoLabel>,
    /// Per agent, the number of subset tasks where the agent produced no valid answer.
    pub invalid_answers: BTreeMap<String, usize>,
}

impl TeamFile {
    pub fn new(report: SelectionReport, subset: SelectionSubset, invalid_answers: BTreeMap<String, usize>) -> Self {
        Self {
            team: report.team,
            accuracies: report.accuracies,
            subset,
            labels: report.labels,
            invalid_answers,
        }
    }
}

pub fn load_team(path: &Path) -> Result<TeamFile, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::invalid(path, e))
}

/// A file name safe for any task id.
pub fn session_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

pub fn write_transcript(dir: &Path, task_id: &str, events: &[TraceEvent]) -> Result<PathBuf, IoError> {
    let path = dir.join(session_file_name(task_id));
    write_jsonl(&path, events)?;
    Ok(path)
}

pub fn parse_transcript(path: &Path, text: &str) -> Result<Vec<TraceEvent>, IoError> {
    lines(text)
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| IoError::line(path, n, e)))
        .collect()
}

pub fn load_transcript(path: &Path) -> Result<Vec<TraceEvent>, IoError> {
    parse_transcript(path, &read_text(path)?)
}

/// A clip listing; the source name is the file stem.
pub fn load_listing(path: &Path) -> Result<(String, Vec<ClipListing>), IoError> {
    let text = read_text(path)?;
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| IoError::invalid(path, "cannot derive a source name"))?
        .to_string();
    let rows = lines(&text)
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| IoError::line(path, n, e)))
        .collect::<Result<Vec<ClipListing>, _>>()?;
    Ok((source, rows))
}

/// Every `*.jsonl` listing in a directory, in file-name order.
pub fn load_listings_dir(dir: &Path) -> Result<Vec<(String, Vec<ClipListing>)>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_listing(p)).collect()
}

/// One id per line; blank lines and `#` comments are ignored.
pub fn load_id_list(path: &Path) -> Result<BTreeSet<String>, IoError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}
