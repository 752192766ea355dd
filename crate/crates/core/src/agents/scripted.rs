use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, AgentProfile, AgentRequest, BackendError, RequestKind};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FixtureKey {
    pub agent_id: String,
    pub task_id: String,
    pub kind: RequestKind,
    /// `None` matches any round; an exact round takes precedence.
    pub round: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    /// Replays a transport failure with the given message.
    TransportFailure(String),
}

/// One line of a fixture file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub agent_id: String,
    pub task_id: String,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Replays fixture replies keyed by (agent, task, kind, round).
#[derive(Clone, Debug, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<FixtureKey, ScriptedReply>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: FixtureKey, reply: ScriptedReply) -> Option<ScriptedReply> {
        self.replies.insert(key, reply)
    }

    pub fn with_reply(
        mut self,
        agent_id: &str,
        task_id: &str,
        kind: RequestKind,
        round: Option<u32>,
        text: &str,
    ) -> Self {
        self.insert(
            FixtureKey {
                agent_id: agent_id.into(),
                task_id: task_id.into(),
                kind,
                round,
            },
            ScriptedReply::Text(text.into()),
        );
        self
    }

    /// A record with neither `reply` nor `failure` is rejected.
    pub fn add_record(&mut self, rec: FixtureRecord) -> Result<(), String> {
        let reply = match (rec.reply, rec.failure) {
            (Some(text), None) => ScriptedReply::Text(text),
            (None, Some(msg)) => ScriptedReply::TransportFailure(msg),
            _ => {
                return Err(format!(
                    "fixture for {}/{}/{} needs exactly one of `reply` or `failure`",
                    rec.agent_id, rec.task_id, rec.kind
                ))
            }
        };
        let key = FixtureKey {
            agent_id: rec.agent_id,
            task_id: rec.task_id,
            kind: rec.kind,
            round: rec.round,
        };
        if self.replies.contains_key(&key) {
            return Err(format!(
                "duplicate fixture for {}/{}/{}/{:?}",
                key.agent_id, key.task_id, key.kind, key.round
            ));
        }
        self.replies.insert(key, reply);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    fn lookup(&self, agent: &str, task: &str, kind: RequestKind, round: u32) -> Option<&ScriptedReply> {
        let mut key = FixtureKey {
            agent_id: agent.into(),
            task_id: task.into(),
            kind,
            round: Some(round),
        };
        self.replies.get(&key).or_else(|| {
            key.round = None;
            self.replies.get(&key)
        })
    }
}

impl AgentBackend for ScriptedBackend {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        let kind = request.kind();
        match self.lookup(&agent.agent_id, request.subject_id, kind, request.round) {
            Some(ScriptedReply::Text(t)) => Ok(t.clone()),
            Some(ScriptedReply::TransportFailure(m)) => Err(BackendError::Transport {
                attempts: 1,
                message: m.clone(),
            }),
            None => Err(BackendError::FixtureMiss(format!(
                "({}, {}, {}, round {})",
                agent.agent_id, request.subject_id, kind, request.round
            ))),
        }
    }
}
