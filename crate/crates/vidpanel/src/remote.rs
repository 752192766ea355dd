//! OpenAI-compatible chat-completions backend and a remote similarity scorer.

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};

use vidpanel_core::agents::{AgentBackend, AgentProfile, AgentRequest, BackendError};
use vidpanel_core::domain::FrameSet;
use vidpanel_core::perception::{ScorerError, SimilarityScorer};

pub const SYSTEM_PROMPT: &str =
    "You are a careful video analyst. Answer using only the frames and text you are given.";

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlight);

impl InFlight {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

/// Sends each request as one system message plus one user message whose content is the
/// rendered prompt followed by the frames as base64 image parts, in frame order.
pub struct RemoteBackend {
    agent: ureq::Agent,
    retry: RetryPolicy,
    in_flight: InFlight,
}

fn mime_for(path: &str) -> &'static str {
    match Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/jpeg",
    }
}

/// Image URL for every frame of the set: remote locators pass through, local files are inlined.
pub fn frame_urls(locator: &str, frames: &FrameSet, video: &vidpanel_core::domain::VideoRef) -> Result<Vec<String>, BackendError> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    if locator.is_empty() {
        return Err(BackendError::Malformed(format!(
            "video `{}` has no frame_locator; cannot attach frames",
            video.video_id
        )));
    }
    frames
        .indices
        .iter()
        .map(|&i| {
            let loc = video.locate(i);
            if loc.starts_with("http://") || loc.starts_with("https://") || loc.starts_with("data:") {
                return Ok(loc);
            }
            let bytes = std::fs::read(&loc)
                .map_err(|e| BackendError::Malformed(format!("frame {i} at `{loc}`: {e}")))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
            Ok(format!("data:{};base64,{b64}", mime_for(&loc)))
        })
        .collect()
}

/// The JSON body for one request.
pub fn chat_payload(agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<Value, BackendError> {
    let endpoint = agent
        .endpoint
        .as_ref()
        .ok_or_else(|| BackendError::Unconfigured(agent.agent_id.clone()))?;
    let prompt = request.prompt()?;
    let mut content = vec![json!({"type": "text", "text": prompt})];
    if let (Some(frames), Some(task)) = (request.frames(), request.task) {
        for url in frame_urls(&task.video.frame_locator, frames, &task.video)? {
            content.push(json!({"type": "image_url", "image_url": {"url": url}}));
        }
    }
    Ok(json!({
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": content},
        ],
    }))
}

/// Text of the first choice; content may be a string or a list of text parts.
pub fn reply_text(body: &Value) -> Result<String, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::Malformed("response has no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(BackendError::Malformed(format!("unexpected content {other}"))),
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(BackendError),
}

impl RemoteBackend {
    pub fn new(retry: RetryPolicy, max_in_flight: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            retry,
            in_flight: InFlight::new(max_in_flight),
        }
    }

    fn attempt(&self, url: &str, key: Option<&str>, payload: &Value) -> Attempt {
        let _permit = self.in_flight.acquire();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(payload) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => match serde_json::from_str::<Value>(&body) {
                Ok(v) => match reply_text(&v) {
                    Ok(t) => Attempt::Done(t),
                    Err(e) => Attempt::Fail(e),
                },
                Err(e) => Attempt::Fail(BackendError::Malformed(format!("response is not JSON: {e}"))),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}: {}", truncate(&body, 200))),
            _ => Attempt::Fail(BackendError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {}", truncate(&body, 200)),
            }),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl AgentBackend for RemoteBackend {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        let endpoint = agent
            .endpoint
            .as_ref()
            .ok_or_else(|| BackendError::Unconfigured(agent.agent_id.clone()))?;
        let key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Unconfigured(format!("{}: environment variable {var} is not set", agent.agent_id))
            })?),
            None => None,
        };
        let payload = chat_payload(agent, request)?;
        let digest = Sha256::digest(payload.to_string().as_bytes());
        debug!(
            agent = %agent.agent_id,
            subject = request.subject_id,
            kind = %request.kind(),
            payload_sha256 = %format!("{digest:x}"),
            "remote call"
        );
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            match self.attempt(&url, key.as_deref(), &payload) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: n + 1,
                        message,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    warn!(agent = %agent.agent_id, attempt = n + 1, error = %msg, "remote call failed");
                    last = msg;
                    if n + 1 < attempts {
                        std::thread::sleep(self.retry.delay(n));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Scores through an HTTP service: POST `{video_id, chunk, frames, text}` → `{"score": f}`.
pub struct RemoteScorer {
    agent: ureq::Agent,
    url: String,
}

impl RemoteScorer {
    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
            url: url.into(),
        }
    }
}

impl SimilarityScorer for RemoteScorer {
    fn score(&self, frames: &FrameSet, text: &str) -> Result<f64, ScorerError> {
        let chunk = match frames.origin {
            vidpanel_core::domain::FrameOrigin::Chunk(k) => Some(k),
            _ => None,
        };
        let body = json!({
            "video_id": frames.video_id,
            "chunk": chunk,
            "frames": frames.indices,
            "text": text,
        });
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| ScorerError(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ScorerError(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ScorerError(format!("HTTP {status}: {}", truncate(&text, 200))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ScorerError(e.to_string()))?;
        v.get("score")
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| ScorerError(format!("response has no finite `score`: {}", truncate(&text, 200))))
    }
}
