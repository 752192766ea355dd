//! Per-question session: perceive, answer, test consensus, judge and eliminate, repeat.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentProfile, AgentRequest, RequestBody};
use crate::deliberation::{
    check_consensus, collect_answers, eliminate_lowest, judge_round, summarize_history,
    column_totals, DeliberationError, HistoryDigest, ScoreMatrix, TotalScores,
};
use crate::domain::{
    parse_answer_letter, validate_task, AgentReply, Answer, FrameSet, OptionLetter, QaTask,
    RoundRecord, Violation,
};
use crate::perception::{
    perceive_all, KeyInfo, PerceptionConfig, PerceptionError, PerceptionMode, RoundSeeds,
    SimilarityScorer,
};
use crate::seed::SeedMixer;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalPolicy {
    /// Highest cumulative judge total among the surviving agents.
    #[default]
    Dynamic,
    /// No elimination; highest cumulative total over the whole team, final round judged too.
    BestScore,
    /// No elimination; the top-ranked agent reads the full history and answers once more.
    DecideByAgent,
}

impl TerminalPolicy {
    pub fn eliminates(self) -> bool {
        self == TerminalPolicy::Dynamic
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalPolicy::Dynamic => "dynamic",
            TerminalPolicy::BestScore => "best_score",
            TerminalPolicy::DecideByAgent => "decide_by_agent",
        }
    }
}

impl fmt::Display for TerminalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for TerminalPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "best_score" => Ok(Self::BestScore),
            "decide_by_agent" => Ok(Self::DecideByAgent),
            other => Err(format!("unknown terminal policy `{other}`")),
        }
    }
}

fn d_rounds() -> u32 {
    3
}
fn d_retries() -> u32 {
    3
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_rounds")]
    pub max_rounds: u32,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub terminal_policy: TerminalPolicy,
    /// Attempts per remote call, including the first.
    #[serde(default = "d_retries")]
    pub retry_attempts: u32,
    #[serde(default)]
    pub seed: u64,
    /// When off, subtitle text is withheld from every prompt.
    #[serde(default = "d_true")]
    pub subtitles: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_rounds: d_rounds(),
            perception: PerceptionConfig::default(),
            terminal_policy: TerminalPolicy::default(),
            retry_attempts: d_retries(),
            seed: 0,
            subtitles: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = &self.perception;
        if self.max_rounds == 0 {
            return Err("max_rounds must be at least 1".into());
        }
        if p.chunk_count == 0 {
            return Err("perception.chunk_count must be at least 1".into());
        }
        if p.rough_samples == 0 || p.global_samples == 0 || p.chunk_samples == 0 {
            return Err("perception sample sizes must be at least 1".into());
        }
        if p.frame_cap == 0 {
            return Err("perception.frame_cap must be at least 1".into());
        }
        if !p.threshold.is_finite() {
            return Err("perception.threshold must be finite".into());
        }
        if self.retry_attempts == 0 {
            return Err("retry_attempts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Consensus,
    TerminalPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: OptionLetter,
    pub decided_by: DecidedBy,
    pub round_decided: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Perceive {
        round: u32,
        agent_id: String,
        mode: PerceptionMode,
        frame_count: usize,
        frames: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key_info: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selected_chunks: Option<Vec<usize>>,
    },
    Answer {
        round: u32,
        reply: AgentReply,
    },
    Consensus {
        round: u32,
        active: Vec<String>,
        reached: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<OptionLetter>,
    },
    Judge {
        round: u32,
        matrix: ScoreMatrix,
    },
    Eliminate {
        round: u32,
        totals: Vec<(String, u32)>,
        removed: String,
    },
    Reflect {
        round: u32,
        history: String,
    },
    Finalize {
        answer: OptionLetter,
        decided_by: DecidedBy,
        round_decided: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        policy: Option<TerminalPolicy>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chosen_agent: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gold: Option<OptionLetter>,
    },
    Error {
        round: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_id: Option<String>,
        message: String,
        fatal: bool,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Perceive { .. } => "perceive",
            Event::Answer { .. } => "answer",
            Event::Consensus { .. } => "consensus",
            Event::Judge { .. } => "judge",
            Event::Eliminate { .. } => "eliminate",
            Event::Reflect { .. } => "reflect",
            Event::Finalize { .. } => "finalize",
            Event::Error { .. } => "error",
        }
    }
}

/// One transcript line. `seq` is a per-session logical clock starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub session: String,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionErrorKind {
    #[error("empty team")]
    EmptyTeam,
    #[error("invalid task: {0:?}")]
    InvalidTask(Vec<Violation>),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("every agent failed in round {0}")]
    AllAgentsFailed(u32),
    #[error("agent `{agent_id}` hit a fatal error: {message}")]
    Fatal { agent_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("session `{task_id}`: {kind}")]
pub struct SessionError {
    pub task_id: String,
    pub kind: SessionErrorKind,
    /// Events logged before the failure.
    pub transcript: Vec<TraceEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutcome {
    pub final_answer: FinalAnswer,
    pub transcript: Vec<TraceEvent>,
    pub records: Vec<RoundRecord>,
    /// Mean frame-set size over every perception outcome of the session.
    pub mean_frames: f64,
    /// Number of answer-stage backend calls made.
    pub answer_calls: usize,
}

/// Mutable state of one session.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub task: QaTask,
    pub team: Vec<AgentProfile>,
    pub active: Vec<String>,
    pub round: u32,
    pub records: Vec<RoundRecord>,
    pub history: Option<HistoryDigest>,
    pub digests: Vec<HistoryDigest>,
    pub key_infos: BTreeMap<String, KeyInfo>,
    /// Sum of judge totals per agent over every judged round.
    pub cumulative: BTreeMap<String, u32>,
    pub last_frames: BTreeMap<String, FrameSet>,
    pub frame_sizes: Vec<usize>,
    pub answer_calls: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub transcript: Vec<TraceEvent>,
}

impl SessionState {
    pub fn new(task: &QaTask, team: &[AgentProfile], config: &RunConfig) -> Self {
        let task = if config.subtitles {
            task.clone()
        } else {
            task.without_subtitles()
        };
        let seed = SeedMixer::new(config.seed).with_str(&task.task_id).finish();
        Self {
            active: team.iter().map(|a| a.agent_id.clone()).collect(),
            team: team.to_vec(),
            task,
            round: 0,
            records: Vec::new(),
            history: None,
            digests: Vec::new(),
            key_infos: BTreeMap::new(),
            cumulative: BTreeMap::new(),
            last_frames: BTreeMap::new(),
            frame_sizes: Vec::new(),
            answer_calls: 0,
            seed,
            config: config.clone(),
            transcript: Vec::new(),
        }
    }

    pub fn log(&mut self, event: Event) {
        tracing::trace!(session = %self.task.task_id, kind = event.kind(), "event");
        self.transcript.push(TraceEvent {
            seq: self.transcript.len() as u64,
            session: self.task.task_id.clone(),
            event,
        });
    }

    fn profile(&self, id: &str) -> Option<&AgentProfile> {
        self.team.iter().find(|a| a.agent_id == id)
    }

    fn active_profiles(&self) -> Vec<AgentProfile> {
        self.active
            .iter()
            .filter_map(|id| self.profile(id).cloned())
            .collect()
    }

    pub fn selection_accuracies(&self) -> BTreeMap<String, f64> {
        self.team
            .iter()
            .filter_map(|a| a.selection_accuracy.map(|s| (a.agent_id.clone(), s)))
            .collect()
    }

    /// The agent's most recent valid answer.
    fn latest_answer(&self, id: &str) -> Option<OptionLetter> {
        self.records.iter().rev().find_map(|r| {
            r.replies
                .iter()
                .find(|x| x.agent_id == id)
                .and_then(|x| x.answer.letter())
        })
    }

    fn drop_agent(&mut self, id: &str, message: String) {
        self.active.retain(|a| a != id);
        let round = self.round;
        self.log(Event::Error {
            round,
            agent_id: Some(id.into()),
            message,
            fatal: false,
        });
    }

    fn fail(mut self, kind: SessionErrorKind) -> SessionError {
        let round = self.round;
        let agent_id = match &kind {
            SessionErrorKind::Fatal { agent_id, .. } => Some(agent_id.clone()),
            _ => None,
        };
        self.log(Event::Error {
            round,
            agent_id,
            message: kind.to_string(),
            fatal: true,
        });
        SessionError {
            task_id: self.task.task_id.clone(),
            kind,
            transcript: self.transcript,
        }
    }

    fn finish(mut self, answer: FinalAnswer, policy: Option<TerminalPolicy>, chosen: Option<String>) -> SessionOutcome {
        let gold = self.task.gold_answer;
        self.log(Event::Finalize {
            answer: answer.answer,
            decided_by: answer.decided_by,
            round_decided: answer.round_decided,
            policy,
            chosen_agent: chosen,
            gold,
        });
        let mean_frames = if self.frame_sizes.is_empty() {
            0.0
        } else {
            self.frame_sizes.iter().sum::<usize>() as f64 / self.frame_sizes.len() as f64
        };
        SessionOutcome {
            final_answer: answer,
            transcript: self.transcript,
            records: self.records,
            mean_frames,
            answer_calls: self.answer_calls,
        }
    }
}

fn fatal(agent_id: &str, message: impl ToString) -> SessionErrorKind {
    SessionErrorKind::Fatal {
        agent_id: agent_id.into(),
        message: message.to_string(),
    }
}

/// Ranks agents best-first: higher total, then higher selection accuracy, then id ascending.
fn rank_best_first<'a>(
    ids: impl IntoIterator<Item = &'a String>,
    totals: &BTreeMap<String, u32>,
    accuracy: &BTreeMap<String, f64>,
) -> Vec<String> {
    let mut ids: Vec<&String> = ids.into_iter().collect();
    let acc = |id: &str| accuracy.get(id).copied().unwrap_or(f64::NEG_INFINITY);
    ids.sort_by(|a, b| {
        let ta = totals.get(*a).copied().unwrap_or(0);
        let tb = totals.get(*b).copied().unwrap_or(0);
        tb.cmp(&ta)
            .then_with(|| acc(b).partial_cmp(&acc(a)).unwrap_or(core::cmp::Ordering::Equal))
            .then_with(|| a.cmp(b))
    });
    ids.into_iter().cloned().collect()
}

/// Picks the best-ranked candidate having a valid latest answer.
fn score_rule(state: &SessionState, pool: &[String]) -> Option<(String, OptionLetter)> {
    let ranked = rank_best_first(pool, &state.cumulative, &state.selection_accuracies());
    ranked
        .into_iter()
        .find_map(|id| state.latest_answer(&id).map(|l| (id, l)))
}

/// Final answer when the loop ends without consensus.
///
/// Falls back to the score rule when `decide_by_agent` gets an unusable reply, and to
/// option A (logged as an error) when no agent ever produced a valid answer.
pub fn terminal_decision(
    state: &mut SessionState,
    policy: TerminalPolicy,
    backend: &dyn AgentBackend,
) -> Result<(FinalAnswer, Option<String>), SessionErrorKind> {
    let round = state.round;
    let decided = |answer| FinalAnswer {
        answer,
        decided_by: DecidedBy::TerminalPolicy,
        round_decided: round,
    };
    if policy == TerminalPolicy::DecideByAgent {
        let acc = state.selection_accuracies();
        let pool: Vec<String> = state.active.clone();
        let none = BTreeMap::new();
        if let Some(leader) = rank_best_first(&pool, &none, &acc).into_iter().next() {
            let profile = state.profile(&leader).cloned().expect("leader is on the team");
            let frames = state.last_frames.get(&leader).cloned().unwrap_or(FrameSet {
                video_id: state.task.video.video_id.clone(),
                indices: Vec::new(),
                origin: crate::domain::FrameOrigin::Global,
            });
            let history = state
                .digests
                .iter()
                .map(|d| d.rendered.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let seed = RoundSeeds {
                session: state.seed,
                round,
            }
            .agent(&leader, "final_answer");
            let request = AgentRequest::for_task(&state.task, round, seed, RequestBody::FinalAnswer { frames, history });
            match backend.invoke(&profile, &request) {
                Ok(raw) => {
                    if let Answer::Letter(l) = parse_answer_letter(&raw) {
                        return Ok((decided(l), Some(leader)));
                    }
                    state.log(Event::Error {
                        round,
                        agent_id: Some(leader.clone()),
                        message: format!("unparseable final answer {raw:?}; using score rule"),
                        fatal: false,
                    });
                }
                Err(e) if e.is_fatal() => return Err(fatal(&leader, e)),
                Err(e) => state.log(Event::Error {
                    round,
                    agent_id: Some(leader.clone()),
                    message: format!("final answer failed: {e}; using score rule"),
                    fatal: false,
                }),
            }
        }
    }
    let pool = state.active.clone();
    if let Some((id, l)) = score_rule(state, &pool) {
        return Ok((decided(l), Some(id)));
    }
    state.log(Event::Error {
        round,
        agent_id: None,
        message: "no valid answer from any agent; defaulting to A".into(),
        fatal: false,
    });
    Ok((decided(OptionLetter::A), None))
}

fn perceive_round(
    state: &mut SessionState,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<crate::perception::PerceptionOutcome>, SessionErrorKind> {
    let profiles = state.active_profiles();
    let refs: Vec<&AgentProfile> = profiles.iter().collect();
    let seeds = RoundSeeds {
        session: state.seed,
        round: state.round,
    };
    let history = state.history.as_ref().map(|h| h.rendered.clone());
    let results = perceive_all(
        &refs,
        &state.task,
        seeds,
        history.as_deref(),
        backend,
        scorer,
        &state.config.perception,
    );
    let mut outcomes = Vec::new();
    for (agent, result) in profiles.iter().zip(results) {
        match result {
            Ok(o) => {
                let round = state.round;
                state.log(Event::Perceive {
                    round,
                    agent_id: o.agent_id.clone(),
                    mode: o.mode,
                    frame_count: o.frames.len(),
                    frames: o.frames.indices.clone(),
                    key_info: o.key_info.as_ref().map(|k| k.text.clone()),
                    selected_chunks: o.selected_chunks.clone(),
                });
                state.frame_sizes.push(o.frames.len());
                state.last_frames.insert(o.agent_id.clone(), o.frames.clone());
                if let Some(k) = &o.key_info {
                    state.key_infos.insert(o.agent_id.clone(), k.clone());
                }
                outcomes.push(o);
            }
            Err(e) if e.is_fatal() => {
                let id = match &e {
                    PerceptionError::Backend { agent_id, .. } => agent_id.clone(),
                    PerceptionError::Scorer { .. } => agent.agent_id.clone(),
                };
                return Err(fatal(&id, e));
            }
            Err(e) => state.drop_agent(&agent.agent_id, e.to_string()),
        }
    }
    Ok(outcomes)
}

fn deliberation_error(e: DeliberationError) -> SessionErrorKind {
    match e {
        DeliberationError::Fatal { agent_id, source } => fatal(&agent_id, source),
        other => fatal("", other),
    }
}

/// Runs the full multi-round protocol on one task.
pub fn run_question(
    task: &QaTask,
    team: &[AgentProfile],
    config: &RunConfig,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
) -> Result<SessionOutcome, SessionError> {
    let mut state = SessionState::new(task, team, config);
    if team.is_empty() {
        return Err(state.fail(SessionErrorKind::EmptyTeam));
    }
    if let Err(e) = config.validate() {
        return Err(state.fail(SessionErrorKind::InvalidConfig(e)));
    }
    let violations = validate_task(task);
    if !violations.is_empty() {
        return Err(state.fail(SessionErrorKind::InvalidTask(violations)));
    }
    let policy = config.terminal_policy;

    for round in 1..=config.max_rounds {
        state.round = round;
        let seeds = RoundSeeds {
            session: state.seed,
            round,
        };
        let outcomes = match perceive_round(&mut state, backend, scorer) {
            Ok(o) => o,
            Err(kind) => return Err(state.fail(kind)),
        };
        if state.active.is_empty() {
            return Err(state.fail(SessionErrorKind::AllAgentsFailed(round)));
        }

        let profiles = state.active_profiles();
        let refs: Vec<&AgentProfile> = profiles.iter().collect();
        state.answer_calls += refs.len();
        let answers = match collect_answers(&refs, &outcomes, &state.task, seeds, backend) {
            Ok(a) => a,
            Err(e) => return Err(state.fail(deliberation_error(e))),
        };
        let mut kept = Vec::new();
        for reply in answers.replies {
            state.log(Event::Answer {
                round,
                reply: reply.clone(),
            });
            match &reply.failure {
                Some(note) => state.drop_agent(&reply.agent_id, note.clone()),
                None => kept.push(reply),
            }
        }
        if kept.is_empty() {
            return Err(state.fail(SessionErrorKind::AllAgentsFailed(round)));
        }
        let answers = crate::deliberation::AnswerSet { replies: kept };
        state.records.push(RoundRecord {
            round,
            replies: answers.replies.clone(),
            totals: None,
            removed: None,
        });

        if state.active.len() >= 2 {
            let consensus = check_consensus(&answers);
            let active = state.active.clone();
            state.log(Event::Consensus {
                round,
                active,
                reached: consensus.is_some(),
                answer: consensus,
            });
            if let Some(answer) = consensus {
                let fa = FinalAnswer {
                    answer,
                    decided_by: DecidedBy::Consensus,
                    round_decided: round,
                };
                return Ok(state.finish(fa, None, None));
            }
        }

        let last = round == config.max_rounds || state.active.len() < 2;
        let judge_now = state.active.len() >= 2 && (!last || policy == TerminalPolicy::BestScore);
        if judge_now {
            let matrix = match judge_round(&refs_of(&state), &state.task, &answers, seeds, backend) {
                Ok(m) => m,
                Err(e) => return Err(state.fail(deliberation_error(e))),
            };
            state.log(Event::Judge {
                round,
                matrix: matrix.clone(),
            });
            let (totals, removed) = if policy.eliminates() && !last {
                match eliminate_lowest(&matrix, &state.selection_accuracies()) {
                    Ok((t, r)) => (t, Some(r)),
                    Err(e) => return Err(state.fail(deliberation_error(e))),
                }
            } else {
                (column_totals(&matrix), None)
            };
            for (id, t) in &totals.totals {
                *state.cumulative.entry(id.clone()).or_insert(0) += t;
            }
            if let Some(r) = &removed {
                state.log(Event::Eliminate {
                    round,
                    totals: totals.totals.clone(),
                    removed: r.clone(),
                });
                state.active.retain(|a| a != r);
            }
            let record = state.records.last_mut().expect("record pushed this round");
            record.totals = Some(totals.totals.clone());
            record.removed = removed.clone();
            if !last {
                reflect(&mut state, round, &answers, &totals, removed.as_deref());
            }
        }
        if last {
            break;
        }
    }

    match terminal_decision(&mut state, policy, backend) {
        Ok((fa, chosen)) => Ok(state.finish(fa, Some(policy), chosen)),
        Err(kind) => Err(state.fail(kind)),
    }
}

fn refs_of(state: &SessionState) -> Vec<&AgentProfile> {
    state
        .active
        .iter()
        .filter_map(|id| state.team.iter().find(|a| a.agent_id == *id))
        .collect()
}

fn reflect(
    state: &mut SessionState,
    round: u32,
    answers: &crate::deliberation::AnswerSet,
    totals: &TotalScores,
    removed: Option<&str>,
) {
    let digest = summarize_history(round, answers, totals, removed);
    state.log(Event::Reflect {
        round,
        history: digest.rendered.clone(),
    });
    state.digests.push(digest.clone());
    state.history = Some(digest);
}
