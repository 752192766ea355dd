//! Frame sampling, chunk retrieval and per-agent perception.
//!
//! Round 1 starts from a rough random sample and asks each agent whether it needs
//! the whole video. "Yes" yields an evenly spaced global sample. "No" makes the agent
//! write key information, which together with the question scores every chunk; the
//! chunks above the threshold (or the single best chunk) supply the frames. Later
//! rounds regenerate key information from the discussion history and always retrieve.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    parse_watch_decision, AgentBackend, AgentProfile, AgentRequest, BackendError, RequestBody,
    WatchDecision,
};
use crate::domain::{FrameOrigin, FrameSet, QaTask, VideoRef};
use crate::seed::{unit_interval, SeedMixer};

fn d_rough() -> usize {
    4
}
fn d_global() -> usize {
    16
}
fn d_chunks() -> usize {
    6
}
fn d_threshold() -> f64 {
    0.8
}
fn d_cap() -> usize {
    96
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    #[serde(default = "d_rough")]
    pub rough_samples: usize,
    #[serde(default = "d_global")]
    pub global_samples: usize,
    #[serde(default = "d_chunks")]
    pub chunk_count: usize,
    #[serde(default = "d_global")]
    pub chunk_samples: usize,
    /// A chunk is kept when its summed similarity is strictly greater than this.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_cap")]
    pub frame_cap: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            rough_samples: d_rough(),
            global_samples: d_global(),
            chunk_count: d_chunks(),
            chunk_samples: d_global(),
            threshold: d_threshold(),
            frame_cap: d_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ScorerError(pub String);

/// Similarity between a frame set and a text. Scores are opaque; only the
/// threshold and argmax rules interpret them.
pub trait SimilarityScorer: Sync {
    fn score(&self, frames: &FrameSet, text: &str) -> Result<f64, ScorerError>;
}

fn chunk_of(frames: &FrameSet) -> u64 {
    match frames.origin {
        FrameOrigin::Chunk(k) => k as u64,
        _ => u64::MAX,
    }
}

/// Deterministic pseudo-random scores in `[0, 1)` keyed on (video, chunk, text).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashScorer {
    pub seed: u64,
}

impl SimilarityScorer for HashScorer {
    fn score(&self, frames: &FrameSet, text: &str) -> Result<f64, ScorerError> {
        let s = SeedMixer::new(self.seed)
            .with_str(&frames.video_id)
            .with_u64(chunk_of(frames))
            .with_str(text)
            .finish();
        Ok(unit_interval(s))
    }
}

fn words(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3)
        .map(|w| w.to_lowercase())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Fraction of the text's words (three letters or more) found in a chunk's keywords.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordScorer {
    /// Per video, one keyword string per chunk.
    pub chunks: BTreeMap<String, Vec<String>>,
}

impl SimilarityScorer for KeywordScorer {
    fn score(&self, frames: &FrameSet, text: &str) -> Result<f64, ScorerError> {
        let FrameOrigin::Chunk(k) = frames.origin else {
            return Ok(0.0);
        };
        let Some(keywords) = self.chunks.get(&frames.video_id).and_then(|c| c.get(k)) else {
            return Ok(0.0);
        };
        let query = words(text);
        if query.is_empty() {
            return Ok(0.0);
        }
        let vocab = words(keywords);
        let hits = query.iter().filter(|w| vocab.binary_search(w).is_ok()).count();
        Ok(hits as f64 / query.len() as f64)
    }
}

fn sample_sorted(range: Range<u32>, n: usize, rng: &mut impl rand::Rng) -> Vec<u32> {
    let len = (range.end - range.start) as usize;
    if len <= n {
        return range.collect();
    }
    let mut picked: Vec<u32> = index::sample(rng, len, n)
        .into_iter()
        .map(|i| range.start + i as u32)
        .collect();
    picked.sort_unstable();
    picked
}

/// `n` distinct uniformly drawn frames, sorted; every frame when the video is shorter.
pub fn rough_sample(video: &VideoRef, n: usize, seed: u64) -> FrameSet {
    let mut rng = SeedMixer::new(seed).with_str("rough").rng();
    FrameSet {
        video_id: video.video_id.clone(),
        indices: sample_sorted(0..video.frame_count, n, &mut rng),
        origin: FrameOrigin::Rough,
    }
}

/// `floor(j * frame_count / n)` for `j < n`, padded with unused frames on collision.
pub fn global_sample(video: &VideoRef, n: usize) -> FrameSet {
    let fc = u64::from(video.frame_count);
    let n = n.min(video.frame_count as usize);
    let mut indices: Vec<u32> = (0..n as u64).map(|j| (j * fc / n as u64) as u32).collect();
    indices.dedup();
    let mut next = 0u32;
    while indices.len() < n {
        if indices.binary_search(&next).is_err() {
            let at = indices.partition_point(|&i| i < next);
            indices.insert(at, next);
        }
        next += 1;
    }
    FrameSet {
        video_id: video.video_id.clone(),
        indices,
        origin: FrameOrigin::Global,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub frame_range: Range<u32>,
    pub sampled: FrameSet,
}

/// Contiguous near-equal partition by frame index, with a seeded sample per chunk.
/// The chunk count is clamped to the frame count so no chunk is empty.
pub fn make_chunks(video: &VideoRef, chunk_count: usize, sample_size: usize, seed: u64) -> Vec<Chunk> {
    let fc = u64::from(video.frame_count);
    let count = (chunk_count.max(1) as u64).min(fc.max(1));
    (0..count)
        .map(|i| {
            let start = (i * fc / count) as u32;
            let end = ((i + 1) * fc / count) as u32;
            let mut rng = SeedMixer::new(seed).with_str("chunk").with_u64(i).rng();
            Chunk {
                index: i as usize,
                frame_range: start..end,
                sampled: FrameSet {
                    video_id: video.video_id.clone(),
                    indices: sample_sorted(start..end, sample_size, &mut rng),
                    origin: FrameOrigin::Chunk(i as usize),
                },
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub chunk: usize,
    pub key_sim: f64,
    pub question_sim: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyInfo {
    pub agent_id: String,
    pub round: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("agent `{agent_id}`: {source}")]
    Backend {
        agent_id: String,
        #[source]
        source: BackendError,
    },
    #[error("scorer failed on chunk {chunk}: {source}")]
    Scorer {
        chunk: usize,
        #[source]
        source: ScorerError,
    },
}

impl PerceptionError {
    pub fn is_fatal(&self) -> bool {
        match self {
            PerceptionError::Backend { source, .. } => source.is_fatal(),
            PerceptionError::Scorer { .. } => true,
        }
    }
}

/// Key similarity plus question similarity for every chunk, in chunk order.
pub fn score_chunks(
    chunks: &[Chunk],
    key_info: &KeyInfo,
    question: &str,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<ChunkScore>, PerceptionError> {
    chunks
        .iter()
        .map(|c| {
            let err = |source| PerceptionError::Scorer {
                chunk: c.index,
                source,
            };
            let key_sim = scorer.score(&c.sampled, &key_info.text).map_err(err)?;
            let question_sim = scorer.score(&c.sampled, question).map_err(err)?;
            Ok(ChunkScore {
                chunk: c.index,
                key_sim,
                question_sim,
                total: key_sim + question_sim,
            })
        })
        .collect()
}

/// Chunks scoring strictly above `threshold`; if none, the best chunk (lowest index on ties).
/// Never empty for a non-empty input.
pub fn select_chunks(scores: &[ChunkScore], threshold: f64) -> Vec<usize> {
    let above: Vec<usize> = scores
        .iter()
        .filter(|s| s.total > threshold)
        .map(|s| s.chunk)
        .collect();
    if !above.is_empty() {
        return above;
    }
    let mut best: Option<&ChunkScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.total > b.total) {
            best = Some(s);
        }
    }
    best.map(|b| alloc::vec![b.chunk]).unwrap_or_default()
}

/// Concatenates the selected chunks' samples. Past `cap`, frames are dropped from the
/// lowest-scoring selected chunks first.
pub fn assemble_frames(
    video_id: &str,
    chunks: &[Chunk],
    scores: &[ChunkScore],
    selected: &[usize],
    cap: usize,
) -> FrameSet {
    let total_of = |k: usize| scores.iter().find(|s| s.chunk == k).map_or(f64::MIN, |s| s.total);
    let mut by_score: Vec<usize> = selected.to_vec();
    by_score.sort_by(|&a, &b| {
        total_of(b)
            .partial_cmp(&total_of(a))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut budget = cap;
    let mut indices: Vec<u32> = Vec::new();
    for k in by_score {
        let Some(chunk) = chunks.iter().find(|c| c.index == k) else {
            continue;
        };
        let take = chunk.sampled.indices.len().min(budget);
        indices.extend_from_slice(&chunk.sampled.indices[..take]);
        budget -= take;
    }
    indices.sort_unstable();
    FrameSet {
        video_id: video_id.into(),
        indices,
        origin: FrameOrigin::Assembled,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    WholeVideo,
    Retrieved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionOutcome {
    pub agent_id: String,
    pub round: u32,
    pub mode: PerceptionMode,
    pub frames: FrameSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_info: Option<KeyInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_scores: Option<Vec<ChunkScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_chunks: Option<Vec<usize>>,
}

/// Seeds used by one perception stage of one session round.
#[derive(Clone, Copy, Debug)]
pub struct RoundSeeds {
    pub session: u64,
    pub round: u32,
}

impl RoundSeeds {
    pub fn agent(&self, agent_id: &str, purpose: &str) -> u64 {
        SeedMixer::new(self.session)
            .with_str(agent_id)
            .with_u64(u64::from(self.round))
            .with_str(purpose)
            .finish()
    }

    pub fn shared(&self, purpose: &str) -> u64 {
        SeedMixer::new(self.session)
            .with_u64(u64::from(self.round))
            .with_str(purpose)
            .finish()
    }
}

fn key_info_from(agent: &AgentProfile, round: u32, reply: String, task: &QaTask) -> KeyInfo {
    let text = if reply.trim().is_empty() {
        task.question.clone()
    } else {
        reply
    };
    KeyInfo {
        agent_id: agent.agent_id.clone(),
        round,
        text,
    }
}

/// Perception for every agent of a round. Backend calls of one stage go out together
/// through [`AgentBackend::invoke_all`]; results stay aligned with `agents`.
pub fn perceive_all(
    agents: &[&AgentProfile],
    task: &QaTask,
    seeds: RoundSeeds,
    history: Option<&str>,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
    config: &PerceptionConfig,
) -> Vec<Result<PerceptionOutcome, PerceptionError>> {
    let round = seeds.round;
    let video = &task.video;
    let fail = |a: &AgentProfile, source| PerceptionError::Backend {
        agent_id: a.agent_id.clone(),
        source,
    };
    let mut results: Vec<Option<Result<PerceptionOutcome, PerceptionError>>> =
        (0..agents.len()).map(|_| None).collect();
    // Agents that still need key information, with the frames behind it.
    let mut need_key: Vec<(usize, Option<FrameSet>)> = Vec::new();

    match history.filter(|_| round > 1) {
        None => {
            let roughs: Vec<FrameSet> = agents
                .iter()
                .map(|a| rough_sample(video, config.rough_samples, seeds.agent(&a.agent_id, "rough")))
                .collect();
            let calls: Vec<(&AgentProfile, AgentRequest<'_>)> = agents
                .iter()
                .zip(&roughs)
                .map(|(a, rough)| {
                    let seed = seeds.agent(&a.agent_id, "decide_watch");
                    let body = RequestBody::DecideWatch {
                        frames: rough.clone(),
                    };
                    (*a, AgentRequest::for_task(task, round, seed, body))
                })
                .collect();
            for (i, (reply, rough)) in backend.invoke_all(&calls).into_iter().zip(roughs).enumerate() {
                match reply.map(|r| parse_watch_decision(&r)) {
                    Ok(WatchDecision::Yes) => {
                        results[i] = Some(Ok(PerceptionOutcome {
                            agent_id: agents[i].agent_id.clone(),
                            round,
                            mode: PerceptionMode::WholeVideo,
                            frames: global_sample(video, config.global_samples),
                            key_info: None,
                            chunk_scores: None,
                            selected_chunks: None,
                        }))
                    }
                    Ok(WatchDecision::No) => need_key.push((i, Some(rough))),
                    Err(e) => results[i] = Some(Err(fail(agents[i], e))),
                }
            }
        }
        Some(_) => need_key.extend((0..agents.len()).map(|i| (i, None))),
    }

    if !need_key.is_empty() {
        let calls: Vec<(&AgentProfile, AgentRequest<'_>)> = need_key
            .iter()
            .map(|(i, rough)| {
                let a = agents[*i];
                let seed = seeds.agent(&a.agent_id, "key_info");
                let body = match (rough, history) {
                    (Some(frames), _) => RequestBody::KeyInfo {
                        frames: frames.clone(),
                    },
                    (None, h) => RequestBody::KeyInfoFromHistory {
                        history: h.unwrap_or_default().into(),
                    },
                };
                (a, AgentRequest::for_task(task, round, seed, body))
            })
            .collect();
        let replies = backend.invoke_all(&calls);
        let chunks = make_chunks(
            video,
            config.chunk_count,
            config.chunk_samples,
            seeds.shared("chunks"),
        );
        for ((i, _), reply) in need_key.iter().zip(replies) {
            let a = agents[*i];
            let outcome = reply.map_err(|e| fail(a, e)).and_then(|text| {
                let key = key_info_from(a, round, text, task);
                let scores = score_chunks(&chunks, &key, &task.question, scorer)?;
                let selected = select_chunks(&scores, config.threshold);
                let frames =
                    assemble_frames(&video.video_id, &chunks, &scores, &selected, config.frame_cap);
                Ok(PerceptionOutcome {
                    agent_id: a.agent_id.clone(),
                    round,
                    mode: PerceptionMode::Retrieved,
                    frames,
                    key_info: Some(key),
                    chunk_scores: Some(scores),
                    selected_chunks: Some(selected),
                })
            });
            results[*i] = Some(outcome);
        }
    }

    results
        .into_iter()
        .map(|r| r.expect("every agent resolved by one perception path"))
        .collect()
}

/// Perception for a single agent.
pub fn perceive(
    agent: &AgentProfile,
    task: &QaTask,
    seeds: RoundSeeds,
    history: Option<&str>,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
    config: &PerceptionConfig,
) -> Result<PerceptionOutcome, PerceptionError> {
    perceive_all(&[agent], task, seeds, history, backend, scorer, config)
        .pop()
        .unwrap_or_else(|| unreachable!("one agent in, one outcome out"))
}

impl core::fmt::Display for PerceptionMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            PerceptionMode::WholeVideo => "whole_video",
            PerceptionMode::Retrieved => "retrieved",
        })
    }
}
