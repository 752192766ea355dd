//! Answer collection, strict-majority consensus, cross-judging and elimination.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    parse_judge_scores, AgentBackend, AgentProfile, AgentRequest, BackendError, Candidate,
    RequestBody, NEUTRAL_SCORE,
};
use crate::domain::{parse_answer_letter, AgentReply, Answer, OptionLetter, QaTask};
use crate::perception::{PerceptionOutcome, RoundSeeds};
use crate::prompt::{render_prompt, Bindings, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeliberationError {
    #[error("judging needs at least 2 active agents, got {0}")]
    TooFewAgents(usize),
    #[error("agent `{agent_id}`: {source}")]
    Fatal {
        agent_id: String,
        #[source]
        source: BackendError,
    },
    #[error("no perception outcome for agent `{0}`")]
    MissingOutcome(String),
}

/// One reply per active agent, in active order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub replies: Vec<AgentReply>,
}

impl AnswerSet {
    pub fn get(&self, agent_id: &str) -> Option<&AgentReply> {
        self.replies.iter().find(|r| r.agent_id == agent_id)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

fn shown_answer(reply: &AgentReply) -> String {
    match reply.answer {
        Answer::Letter(l) => l.to_string(),
        Answer::Invalid => reply.raw_text.clone(),
    }
}

fn failed_reply(agent_id: &str, raw: String, note: &BackendError) -> AgentReply {
    AgentReply {
        agent_id: agent_id.into(),
        answer: Answer::Invalid,
        reason: String::new(),
        raw_text: raw,
        failure: Some(note.to_string()),
    }
}

/// Asks each agent for its answer, then for the reason behind it.
///
/// A non-fatal backend failure turns that agent's reply into `Invalid` with the failure
/// noted; fatal failures (e.g. a missing fixture) abort.
pub fn collect_answers(
    active: &[&AgentProfile],
    outcomes: &[PerceptionOutcome],
    task: &QaTask,
    seeds: RoundSeeds,
    backend: &dyn AgentBackend,
) -> Result<AnswerSet, DeliberationError> {
    let frames_of = |a: &AgentProfile| {
        outcomes
            .iter()
            .find(|o| o.agent_id == a.agent_id)
            .map(|o| o.frames.clone())
            .ok_or_else(|| DeliberationError::MissingOutcome(a.agent_id.clone()))
    };
    let mut frames = Vec::with_capacity(active.len());
    for a in active {
        frames.push(frames_of(a)?);
    }
    let calls: Vec<(&AgentProfile, AgentRequest<'_>)> = active
        .iter()
        .zip(&frames)
        .map(|(a, f)| {
            let seed = seeds.agent(&a.agent_id, "answer");
            (*a, AgentRequest::for_task(task, seeds.round, seed, RequestBody::Answer { frames: f.clone() }))
        })
        .collect();
    let answers = backend.invoke_all(&calls);

    let mut replies: Vec<Option<AgentReply>> = (0..active.len()).map(|_| None).collect();
    let mut reason_calls: Vec<(usize, (&AgentProfile, AgentRequest<'_>))> = Vec::new();
    for (i, result) in answers.into_iter().enumerate() {
        let a = active[i];
        match result {
            Ok(raw) => {
                let answer = parse_answer_letter(&raw);
                let predicted = match answer {
                    Answer::Letter(l) => l.to_string(),
                    Answer::Invalid => raw.clone(),
                };
                let seed = seeds.agent(&a.agent_id, "reason");
                let body = RequestBody::Reason {
                    frames: frames[i].clone(),
                    predicted,
                };
                reason_calls.push((i, (a, AgentRequest::for_task(task, seeds.round, seed, body))));
                replies[i] = Some(AgentReply {
                    agent_id: a.agent_id.clone(),
                    answer,
                    reason: String::new(),
                    raw_text: raw,
                    failure: None,
                });
            }
            Err(e) if e.is_fatal() => {
                return Err(DeliberationError::Fatal {
                    agent_id: a.agent_id.clone(),
                    source: e,
                })
            }
            Err(e) => replies[i] = Some(failed_reply(&a.agent_id, String::new(), &e)),
        }
    }

    let (slots, calls): (Vec<usize>, Vec<_>) = reason_calls.into_iter().unzip();
    for (i, result) in slots.into_iter().zip(backend.invoke_all(&calls)) {
        let reply = replies[i].as_mut().expect("answer slot filled before reason");
        match result {
            Ok(reason) => reply.reason = reason,
            Err(e) if e.is_fatal() => {
                return Err(DeliberationError::Fatal {
                    agent_id: reply.agent_id.clone(),
                    source: e,
                })
            }
            Err(e) => *reply = failed_reply(&reply.agent_id, core::mem::take(&mut reply.raw_text), &e),
        }
    }
    Ok(AnswerSet {
        replies: replies.into_iter().map(|r| r.expect("all slots filled")).collect(),
    })
}

/// The answer whose votes strictly exceed half of the replies; invalid replies never vote.
pub fn check_consensus(answers: &AnswerSet) -> Option<OptionLetter> {
    let n = answers.replies.len();
    let mut counts = [0usize; 4];
    for r in &answers.replies {
        if let Answer::Letter(l) = r.answer {
            counts[l.index()] += 1;
        }
    }
    OptionLetter::ALL
        .into_iter()
        .find(|l| 2 * counts[l.index()] > n)
}

/// One judge's scores over every candidate, in candidate order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRow {
    pub judge: String,
    pub scores: Vec<u8>,
    /// Set when the judge's reply could not be used and neutral scores were substituted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_reason: Option<String>,
}

/// Judges × agents; both axes are the active agents in the same order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub agents: Vec<String>,
    pub rows: Vec<JudgeRow>,
}

impl ScoreMatrix {
    /// Builds a matrix from raw rows, clamping every entry to `[1, 10]`.
    pub fn from_rows(agents: Vec<String>, rows: Vec<Vec<u8>>) -> Self {
        let rows = agents
            .iter()
            .zip(rows)
            .map(|(judge, scores)| JudgeRow {
                judge: judge.clone(),
                scores: scores.into_iter().map(|s| s.clamp(1, 10)).collect(),
                neutral_reason: None,
            })
            .collect();
        Self { agents, rows }
    }
}

/// Every active agent scores every answer, its own included.
pub fn judge_round(
    active: &[&AgentProfile],
    task: &QaTask,
    answers: &AnswerSet,
    seeds: RoundSeeds,
    backend: &dyn AgentBackend,
) -> Result<ScoreMatrix, DeliberationError> {
    if active.len() < 2 {
        return Err(DeliberationError::TooFewAgents(active.len()));
    }
    let agents: Vec<String> = active.iter().map(|a| a.agent_id.clone()).collect();
    let candidates: Vec<Candidate> = agents
        .iter()
        .map(|id| {
            let reply = answers.get(id);
            Candidate {
                agent_id: id.clone(),
                answer: reply.map_or(Answer::Invalid, |r| r.answer),
                answer_text: reply.map(shown_answer).unwrap_or_default(),
                reason: reply.map(|r| r.reason.clone()).unwrap_or_default(),
            }
        })
        .collect();
    let calls: Vec<(&AgentProfile, AgentRequest<'_>)> = active
        .iter()
        .map(|a| {
            let seed = seeds.agent(&a.agent_id, "judge");
            let body = RequestBody::Judge {
                candidates: candidates.clone(),
            };
            (*a, AgentRequest::for_task(task, seeds.round, seed, body))
        })
        .collect();
    let ids: Vec<&str> = agents.iter().map(String::as_str).collect();
    let neutral = || alloc::vec![NEUTRAL_SCORE; agents.len()];
    let mut rows = Vec::with_capacity(active.len());
    for (a, result) in active.iter().zip(backend.invoke_all(&calls)) {
        let row = match result {
            Ok(raw) => match parse_judge_scores(&raw, &ids) {
                Ok(s) => JudgeRow {
                    judge: a.agent_id.clone(),
                    scores: s.scores,
                    neutral_reason: None,
                },
                Err(e) => JudgeRow {
                    judge: a.agent_id.clone(),
                    scores: neutral(),
                    neutral_reason: Some(e.to_string()),
                },
            },
            Err(e) if e.is_fatal() => {
                return Err(DeliberationError::Fatal {
                    agent_id: a.agent_id.clone(),
                    source: e,
                })
            }
            Err(e) => JudgeRow {
                judge: a.agent_id.clone(),
                scores: neutral(),
                neutral_reason: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(ScoreMatrix { agents, rows })
}

/// Column sums of a score matrix, one per agent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TotalScores {
    pub totals: Vec<(String, u32)>,
}

impl TotalScores {
    pub fn of(&self, agent_id: &str) -> Option<u32> {
        self.totals.iter().find(|(a, _)| a == agent_id).map(|(_, t)| *t)
    }
}

pub fn column_totals(matrix: &ScoreMatrix) -> TotalScores {
    let totals = matrix
        .agents
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let sum = matrix
                .rows
                .iter()
                .map(|r| u32::from(r.scores.get(j).copied().unwrap_or(NEUTRAL_SCORE)))
                .sum();
            (id.clone(), sum)
        })
        .collect();
    TotalScores { totals }
}

/// Orders agents worst-first: lowest total, then lower selection accuracy, then id ascending.
fn worst_first(a: &(String, u32), b: &(String, u32), acc: &BTreeMap<String, f64>) -> core::cmp::Ordering {
    let acc_of = |id: &str| acc.get(id).copied().unwrap_or(f64::NEG_INFINITY);
    a.1.cmp(&b.1)
        .then_with(|| {
            acc_of(&a.0)
                .partial_cmp(&acc_of(&b.0))
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .then_with(|| a.0.cmp(&b.0))
}

/// Totals per agent and the agent to eliminate.
pub fn eliminate_lowest(
    matrix: &ScoreMatrix,
    selection_accuracy: &BTreeMap<String, f64>,
) -> Result<(TotalScores, String), DeliberationError> {
    if matrix.agents.len() < 2 {
        return Err(DeliberationError::TooFewAgents(matrix.agents.len()));
    }
    let totals = column_totals(matrix);
    let loser = totals
        .totals
        .iter()
        .min_by(|a, b| worst_first(a, b, selection_accuracy))
        .map(|(id, _)| id.clone())
        .expect("at least two agents");
    Ok((totals, loser))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub agent_id: String,
    /// 1-based position label used in prompts ("Agent k").
    pub label: usize,
    pub answer: String,
    pub reason: String,
    pub score: Option<u32>,
}

/// Rendered record of one round for the next round's key-information prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryDigest {
    pub round: u32,
    pub entries: Vec<HistoryEntry>,
    pub removed: Option<HistoryEntry>,
    pub rendered: String,
}

pub fn summarize_history(
    round: u32,
    answers: &AnswerSet,
    totals: &TotalScores,
    eliminated: Option<&str>,
) -> HistoryDigest {
    let mut entries = Vec::new();
    let mut removed = None;
    for (i, r) in answers.replies.iter().enumerate() {
        let entry = HistoryEntry {
            agent_id: r.agent_id.clone(),
            label: i + 1,
            answer: shown_answer(r),
            reason: r.reason.clone(),
            score: totals.of(&r.agent_id),
        };
        if eliminated == Some(r.agent_id.as_str()) {
            removed = Some(entry);
        } else {
            entries.push(entry);
        }
    }
    let template = PromptTemplate::History {
        survivors: entries.iter().map(|e| e.label).collect(),
        removed: removed.as_ref().map(|e| e.label),
    };
    let mut b = Bindings::new();
    for e in entries.iter().chain(removed.as_ref()) {
        let k = e.label;
        b.insert(format!("Agent {k}"), format!("Agent {k}"));
        b.insert(format!("Agent {k}'s Answer"), e.answer.clone());
        b.insert(format!("Agent {k}'s Reason"), e.reason.clone());
        b.insert(
            format!("Agent {k}'s Score"),
            e.score.map(|s| s.to_string()).unwrap_or_default(),
        );
    }
    let rendered = render_prompt(&template, &b).expect("history bindings cover every label");
    HistoryDigest {
        round,
        entries,
        removed,
        rendered,
    }
}
