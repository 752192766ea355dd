//! Agent profiles, the request/reply contract, and reply parsers.

mod scripted;
mod stochastic;

pub use scripted::{FixtureKey, FixtureRecord, ScriptedBackend, ScriptedReply};
pub use stochastic::{JudgeModel, ScoreBand, StochasticBackend};

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Answer, FrameSet, QaTask};
use crate::prompt::{render_prompt, Bindings, PromptError, PromptTemplate};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_MAX_TOKENS: u32 = 168;
pub const NEUTRAL_SCORE: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Scripted,
    Stochastic,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// Chat endpoint of a remote agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
    /// Per-agent answer accuracy of a stochastic agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Pseudo-label accuracy recorded by team selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_accuracy: Option<f64>,
}

impl AgentProfile {
    pub fn scripted(id: &str) -> Self {
        Self {
            agent_id: id.into(),
            backend: BackendKind::Scripted,
            endpoint: None,
            accuracy: None,
            selection_accuracy: None,
        }
    }

    pub fn stochastic(id: &str, accuracy: f64) -> Self {
        Self {
            agent_id: id.into(),
            backend: BackendKind::Stochastic,
            endpoint: None,
            accuracy: Some(accuracy),
            selection_accuracy: None,
        }
    }

    pub fn with_selection_accuracy(mut self, acc: f64) -> Self {
        self.selection_accuracy = Some(acc);
        self
    }
}

/// Problems found in an agent library description.
pub fn validate_library(agents: &[AgentProfile]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        if agents[..i].iter().any(|b| b.agent_id == a.agent_id) {
            out.push(format!("duplicate agent id `{}`", a.agent_id));
        }
        match (a.backend, a.endpoint.is_some()) {
            (BackendKind::Remote, false) => {
                out.push(format!("remote agent `{}` has no endpoint", a.agent_id))
            }
            (BackendKind::Scripted | BackendKind::Stochastic, true) => out.push(format!(
                "agent `{}` has an endpoint but is not remote",
                a.agent_id
            )),
            _ => {}
        }
        if a.backend == BackendKind::Stochastic {
            match a.accuracy {
                Some(p) if (0.0..=1.0).contains(&p) => {}
                Some(p) => out.push(format!("agent `{}` accuracy {p} outside [0,1]", a.agent_id)),
                None => out.push(format!("stochastic agent `{}` needs an accuracy", a.agent_id)),
            }
        }
        if let Some(s) = a.selection_accuracy {
            if !(0.0..=1.0).contains(&s) {
                out.push(format!("agent `{}` selection accuracy outside [0,1]", a.agent_id));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    DecideWatch,
    KeyInfo,
    Answer,
    Reason,
    Judge,
    Summarize,
    FinalAnswer,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::DecideWatch => "decide_watch",
            RequestKind::KeyInfo => "key_info",
            RequestKind::Answer => "answer",
            RequestKind::Reason => "reason",
            RequestKind::Judge => "judge",
            RequestKind::Summarize => "summarize",
            RequestKind::FinalAnswer => "final_answer",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One answer under review in a judge request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub agent_id: String,
    pub answer: Answer,
    /// What the judge is shown as the answer: the letter, or the raw reply when invalid.
    pub answer_text: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RequestBody {
    DecideWatch { frames: FrameSet },
    KeyInfo { frames: FrameSet },
    KeyInfoFromHistory { history: String },
    Answer { frames: FrameSet },
    Reason { frames: FrameSet, predicted: String },
    Judge { candidates: Vec<Candidate> },
    FinalAnswer { frames: FrameSet, history: String },
    Summarize { text: String, budget_words: usize },
}

/// A single call to an agent. `subject_id` is the task id, or the clip id for caption rewriting.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRequest<'a> {
    pub subject_id: &'a str,
    pub task: Option<&'a QaTask>,
    pub round: u32,
    pub seed: u64,
    pub body: RequestBody,
}

impl<'a> AgentRequest<'a> {
    pub fn for_task(task: &'a QaTask, round: u32, seed: u64, body: RequestBody) -> Self {
        Self {
            subject_id: &task.task_id,
            task: Some(task),
            round,
            seed,
            body,
        }
    }

    pub fn kind(&self) -> RequestKind {
        match &self.body {
            RequestBody::DecideWatch { .. } => RequestKind::DecideWatch,
            RequestBody::KeyInfo { .. } | RequestBody::KeyInfoFromHistory { .. } => {
                RequestKind::KeyInfo
            }
            RequestBody::Answer { .. } => RequestKind::Answer,
            RequestBody::Reason { .. } => RequestKind::Reason,
            RequestBody::Judge { .. } => RequestKind::Judge,
            RequestBody::FinalAnswer { .. } => RequestKind::FinalAnswer,
            RequestBody::Summarize { .. } => RequestKind::Summarize,
        }
    }

    /// Frames to attach, in index order.
    pub fn frames(&self) -> Option<&FrameSet> {
        match &self.body {
            RequestBody::DecideWatch { frames }
            | RequestBody::KeyInfo { frames }
            | RequestBody::Answer { frames }
            | RequestBody::Reason { frames, .. }
            | RequestBody::FinalAnswer { frames, .. } => Some(frames),
            _ => None,
        }
    }

    pub fn template(&self) -> PromptTemplate {
        match &self.body {
            RequestBody::DecideWatch { .. } => PromptTemplate::DecideWatch,
            RequestBody::KeyInfo { .. } => PromptTemplate::KeyInfo,
            RequestBody::KeyInfoFromHistory { .. } => PromptTemplate::KeyInfoFromHistory,
            RequestBody::Answer { .. } => PromptTemplate::Answer,
            RequestBody::Reason { .. } => PromptTemplate::Reason,
            RequestBody::Judge { candidates } => PromptTemplate::Judge {
                agents: candidates.len(),
            },
            RequestBody::FinalAnswer { .. } => PromptTemplate::FinalAnswer,
            RequestBody::Summarize { .. } => PromptTemplate::CaptionRewrite,
        }
    }

    pub fn bindings(&self) -> Bindings {
        let mut b = Bindings::new();
        let mut put = |k: &str, v: String| {
            b.insert(k.to_string(), v);
        };
        if let Some(task) = self.task {
            let subs = task.subtitles.clone().unwrap_or_default();
            put("Question", task.question.clone());
            put("Options", task.render_options());
            put("Subtitles", subs.clone());
            // The watch-decision template spells this placeholder differently.
            put("Subtitiles", subs);
            put("Yes/No", String::new());
        }
        if let Some(frames) = self.frames() {
            put("Frame tokens", frame_tokens(frames));
        }
        match &self.body {
            RequestBody::KeyInfoFromHistory { history } => put("History", history.clone()),
            RequestBody::FinalAnswer { history, .. } => put("History", history.clone()),
            RequestBody::Reason { predicted, .. } => put("Predict answer", predicted.clone()),
            RequestBody::Judge { candidates } => {
                for (i, c) in candidates.iter().enumerate() {
                    let k = i + 1;
                    put(&format!("Agent {k}"), format!("Agent {k}"));
                    put(&format!("Agent {k}'s Answer"), c.answer_text.clone());
                    put(&format!("Agent {k}'s Reason"), c.reason.clone());
                    put(&format!("Agent {k}'s Score"), format!("Agent {k}'s Score"));
                }
                put("Reason", "<reason>".into());
            }
            RequestBody::Summarize { text, budget_words } => {
                put("Caption", text.clone());
                put("Budget", budget_words.to_string());
            }
            _ => {}
        }
        b
    }

    pub fn prompt(&self) -> Result<String, PromptError> {
        render_prompt(&self.template(), &self.bindings())
    }
}

fn frame_tokens(frames: &FrameSet) -> String {
    let mut s = String::new();
    for (i, idx) in frames.indices.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("<frame:{idx}>"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no scripted reply for {0}")]
    FixtureMiss(String),
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("agent `{0}` has no backend of its kind configured")]
    Unconfigured(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl BackendError {
    /// Fatal errors abort the session; the rest only drop the failing agent.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            BackendError::FixtureMiss(_) | BackendError::Unconfigured(_) | BackendError::Prompt(_)
        )
    }
}

/// Behaviour contract of an agent backend.
pub trait AgentBackend: Sync {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError>;

    /// Fan-out over independent calls. Results come back in call order.
    fn invoke_all(
        &self,
        calls: &[(&AgentProfile, AgentRequest<'_>)],
    ) -> Vec<Result<String, BackendError>> {
        calls.iter().map(|(a, r)| self.invoke(a, r)).collect()
    }
}

impl<T: AgentBackend + ?Sized> AgentBackend for &T {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        (**self).invoke(agent, request)
    }

    fn invoke_all(
        &self,
        calls: &[(&AgentProfile, AgentRequest<'_>)],
    ) -> Vec<Result<String, BackendError>> {
        (**self).invoke_all(calls)
    }
}

impl<T: AgentBackend + ?Sized> AgentBackend for Box<T> {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        (**self).invoke(agent, request)
    }

    fn invoke_all(
        &self,
        calls: &[(&AgentProfile, AgentRequest<'_>)],
    ) -> Vec<Result<String, BackendError>> {
        (**self).invoke_all(calls)
    }
}

/// Dispatches each call to the backend matching the agent's [`BackendKind`].
#[derive(Default)]
pub struct BackendRouter {
    pub scripted: Option<ScriptedBackend>,
    pub stochastic: Option<StochasticBackend>,
    pub remote: Option<Box<dyn AgentBackend + Send>>,
}

impl AgentBackend for BackendRouter {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        let missing = || BackendError::Unconfigured(agent.agent_id.clone());
        match agent.backend {
            BackendKind::Scripted => self.scripted.as_ref().ok_or_else(missing)?.invoke(agent, request),
            BackendKind::Stochastic => self
                .stochastic
                .as_ref()
                .ok_or_else(missing)?
                .invoke(agent, request),
            BackendKind::Remote => self.remote.as_ref().ok_or_else(missing)?.invoke(agent, request),
        }
    }
}

/// Scores from one judge, aligned with the agents listed in its request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub scores: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no score line for agent {position} (`{agent_id}`)")]
pub struct JudgeParseError {
    pub position: usize,
    pub agent_id: String,
}

fn normalise_line(line: &str) -> String {
    line.chars()
        .filter(|c| !matches!(c, '*' | '{' | '}' | '#' | '`' | '_'))
        .map(|c| if c == '\u{2019}' { '\'' } else { c.to_ascii_lowercase() })
        .collect()
}

fn first_integer(s: &str) -> Option<i64> {
    let bytes = s.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let negative = start > 0 && bytes[start - 1] == b'-';
    let digits = bytes[start..].iter().take_while(|b| b.is_ascii_digit()).count();
    let text = &s[start..start + digits];
    let magnitude = text.parse::<i64>().unwrap_or(i64::MAX);
    Some(if negative { -magnitude } else { magnitude })
}

/// Reads `Agent k's Score: n` lines (or `<agent_id>'s Score: n`), clamping to `[1, 10]`.
pub fn parse_judge_scores(raw: &str, agent_ids: &[&str]) -> Result<JudgeScores, JudgeParseError> {
    let lines: Vec<String> = raw.lines().map(normalise_line).collect();
    let mut scores = Vec::with_capacity(agent_ids.len());
    for (i, id) in agent_ids.iter().enumerate() {
        let positional = format!("agent {}'s score", i + 1);
        let named = format!("{}'s score", id.to_ascii_lowercase());
        let value = lines.iter().find_map(|l| {
            let at = l
                .find(&positional)
                .map(|p| p + positional.len())
                .or_else(|| l.find(&named).map(|p| p + named.len()))?;
            first_integer(&l[at..])
        });
        let value = value.ok_or_else(|| JudgeParseError {
            position: i + 1,
            agent_id: (*id).to_string(),
        })?;
        scores.push(value.clamp(1, 10) as u8);
    }
    Ok(JudgeScores { scores })
}

/// Renders scores in the judge template's answer format.
pub fn format_judge_scores(scores: &[u8]) -> String {
    let mut out = String::new();
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("Agent {}'s Score: {s}\n", i + 1));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchDecision {
    Yes,
    No,
}

/// First standalone yes/no token wins; anything else means No.
pub fn parse_watch_decision(raw: &str) -> WatchDecision {
    raw.split(|c: char| !c.is_alphabetic())
        .find_map(|tok| {
            if tok.eq_ignore_ascii_case("yes") {
                Some(WatchDecision::Yes)
            } else if tok.eq_ignore_ascii_case("no") {
                Some(WatchDecision::No)
            } else {
                None
            }
        })
        .unwrap_or(WatchDecision::No)
}
