//! Clip corpus preparation for retrieval fine-tuning: segment, duration filter,
//! caption rewrite, caption-length filter, statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentProfile, AgentRequest, RequestBody};

pub const MIN_DURATION_S: f64 = 5.0;
pub const MAX_DURATION_S: f64 = 720.0;
pub const MIN_CAPTION_TOKENS: usize = 20;
/// Word budget given to caption rewriters.
pub const DEFAULT_CAPTION_BUDGET: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipStatus {
    /// Passed every stage applied so far.
    Kept,
    DroppedDuration,
    DroppedCaption,
    /// Caption replaced; still in the corpus unless a later stage drops it.
    Rewritten,
    /// Excluded by a manual review list.
    DroppedReview,
}

impl ClipStatus {
    pub fn is_dropped(self) -> bool {
        matches!(
            self,
            ClipStatus::DroppedDuration | ClipStatus::DroppedCaption | ClipStatus::DroppedReview
        )
    }

    /// In the corpus so far: `Kept` or `Rewritten`.
    pub fn is_kept(self) -> bool {
        !self.is_dropped()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClipStatus::Kept => "kept",
            ClipStatus::DroppedDuration => "dropped_duration",
            ClipStatus::DroppedCaption => "dropped_caption",
            ClipStatus::Rewritten => "rewritten",
            ClipStatus::DroppedReview => "dropped_review",
        }
    }
}

/// One line of a per-source clip listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipListing {
    pub clip_id: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub source: String,
    pub clip_id: String,
    pub duration_s: f64,
    pub caption: String,
    pub caption_token_count: usize,
    pub status: ClipStatus,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub rewrite_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LongvrError {
    #[error("clip `{source_name}/{clip_id}` has non-positive duration ({start_s}..{end_s})")]
    NonPositiveDuration {
        source_name: String,
        clip_id: String,
        start_s: f64,
        end_s: f64,
    },
    #[error("duplicate clip `{source_name}/{clip_id}`")]
    DuplicateClip { source_name: String, clip_id: String },
}

pub trait Tokenizer: Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts whitespace-separated words.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Converts a listing line into a record with a token count.
pub fn segment(source: &str, listing: &ClipListing, tokenizer: &dyn Tokenizer) -> Result<ClipRecord, LongvrError> {
    let duration_s = listing.end_s - listing.start_s;
    if duration_s.is_nan() || duration_s <= 0.0 {
        return Err(LongvrError::NonPositiveDuration {
            source_name: source.into(),
            clip_id: listing.clip_id.clone(),
            start_s: listing.start_s,
            end_s: listing.end_s,
        });
    }
    Ok(ClipRecord {
        source: source.into(),
        clip_id: listing.clip_id.clone(),
        duration_s,
        caption: listing.caption.clone(),
        caption_token_count: tokenizer.count(&listing.caption),
        status: ClipStatus::Kept,
        rewrite_failed: false,
    })
}

/// Drops clips shorter than 5 s or longer than 720 s; both bounds are kept.
pub fn filter_duration(clips: Vec<ClipRecord>) -> Vec<ClipRecord> {
    clips
        .into_iter()
        .map(|mut c| {
            if !c.status.is_dropped() && !(MIN_DURATION_S..=MAX_DURATION_S).contains(&c.duration_s) {
                c.status = ClipStatus::DroppedDuration;
            }
            c
        })
        .collect()
}

/// Recounts tokens and drops captions below `min_tokens`.
pub fn filter_caption(clips: Vec<ClipRecord>, min_tokens: usize, tokenizer: &dyn Tokenizer) -> Vec<ClipRecord> {
    clips
        .into_iter()
        .map(|mut c| {
            if !c.status.is_dropped() {
                c.caption_token_count = tokenizer.count(&c.caption);
                if c.caption_token_count < min_tokens {
                    c.status = ClipStatus::DroppedCaption;
                }
            }
            c
        })
        .collect()
}

/// Marks listed clip ids (`source/clip_id` or bare `clip_id`) as dropped by review.
pub fn exclude_reviewed(clips: Vec<ClipRecord>, reviewed: &BTreeSet<String>) -> Vec<ClipRecord> {
    clips
        .into_iter()
        .map(|mut c| {
            let qualified = alloc::format!("{}/{}", c.source, c.clip_id);
            if !c.status.is_dropped() && (reviewed.contains(&qualified) || reviewed.contains(&c.clip_id)) {
                c.status = ClipStatus::DroppedReview;
            }
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("caption rewrite failed: {0}")]
pub struct RewriteError(pub String);

pub trait CaptionRewriter: Sync {
    fn rewrite(&self, clip: &ClipRecord) -> Result<String, RewriteError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityRewriter;

impl CaptionRewriter for IdentityRewriter {
    fn rewrite(&self, clip: &ClipRecord) -> Result<String, RewriteError> {
        Ok(clip.caption.clone())
    }
}

/// Replays a fixed caption-to-caption mapping; unmapped captions fail.
#[derive(Clone, Debug, Default)]
pub struct ScriptedRewriter {
    pub map: BTreeMap<String, String>,
}

impl CaptionRewriter for ScriptedRewriter {
    fn rewrite(&self, clip: &ClipRecord) -> Result<String, RewriteError> {
        self.map
            .get(&clip.caption)
            .cloned()
            .ok_or_else(|| RewriteError(alloc::format!("no scripted rewrite for clip `{}`", clip.clip_id)))
    }
}

/// Asks an agent to compress the caption under a word budget.
pub struct AgentRewriter<'a> {
    pub backend: &'a dyn AgentBackend,
    pub agent: AgentProfile,
    pub budget_words: usize,
}

impl CaptionRewriter for AgentRewriter<'_> {
    fn rewrite(&self, clip: &ClipRecord) -> Result<String, RewriteError> {
        let seed = crate::seed::SeedMixer::new(0)
            .with_str(&clip.source)
            .with_str(&clip.clip_id)
            .finish();
        let request = AgentRequest {
            subject_id: &clip.clip_id,
            task: None,
            round: 1,
            seed,
            body: RequestBody::Summarize {
                text: clip.caption.clone(),
                budget_words: self.budget_words,
            },
        };
        let text = self
            .backend
            .invoke(&self.agent, &request)
            .map_err(|e| RewriteError(e.to_string()))?;
        let text = text.trim();
        if text.is_empty() {
            return Err(RewriteError("empty rewrite".into()));
        }
        Ok(text.into())
    }
}

/// Applies the rewriter to a surviving clip not yet attempted. A failure keeps the
/// original caption and sets `rewrite_failed`.
pub fn rewrite_caption(clip: ClipRecord, rewriter: &dyn CaptionRewriter, tokenizer: &dyn Tokenizer) -> ClipRecord {
    if clip.status != ClipStatus::Kept || clip.rewrite_failed {
        return clip;
    }
    match rewriter.rewrite(&clip) {
        Ok(caption) => ClipRecord {
            caption_token_count: tokenizer.count(&caption),
            caption,
            status: ClipStatus::Rewritten,
            rewrite_failed: false,
            ..clip
        },
        Err(e) => {
            tracing::warn!(source = %clip.source, clip = %clip.clip_id, error = %e, "caption rewrite failed");
            ClipRecord {
                rewrite_failed: true,
                ..clip
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_kept: usize,
    /// `None` when nothing was kept.
    pub mean_duration_s: Option<f64>,
    pub mean_caption_tokens: Option<f64>,
    pub per_source: BTreeMap<String, usize>,
    pub status_counts: BTreeMap<String, usize>,
    pub rewrite_failures: usize,
}

pub fn corpus_stats(clips: &[ClipRecord]) -> CorpusStats {
    let mut s = CorpusStats::default();
    let (mut dur, mut tok) = (0.0, 0.0);
    for c in clips {
        *s.status_counts.entry(c.status.as_str().to_string()).or_insert(0) += 1;
        s.rewrite_failures += usize::from(c.rewrite_failed);
        if c.status.is_kept() {
            s.total_kept += 1;
            dur += c.duration_s;
            tok += c.caption_token_count as f64;
            *s.per_source.entry(c.source.clone()).or_insert(0) += 1;
        }
    }
    if s.total_kept > 0 {
        let n = s.total_kept as f64;
        s.mean_duration_s = Some(dur / n);
        s.mean_caption_tokens = Some(tok / n);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub min_tokens: usize,
    #[serde(default)]
    pub reviewed: BTreeSet<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_tokens: MIN_CAPTION_TOKENS,
            reviewed: BTreeSet::new(),
        }
    }
}

/// Segments every listing and sorts by source then clip id.
pub fn segment_all(
    sources: &[(String, Vec<ClipListing>)],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<ClipRecord>, LongvrError> {
    let mut out = Vec::new();
    for (source, listings) in sources {
        for l in listings {
            out.push(segment(source, l, tokenizer)?);
        }
    }
    out.sort_by(|a, b| (&a.source, &a.clip_id).cmp(&(&b.source, &b.clip_id)));
    if let Some(w) = out
        .windows(2)
        .find(|w| w[0].source == w[1].source && w[0].clip_id == w[1].clip_id)
    {
        return Err(LongvrError::DuplicateClip {
            source_name: w[0].source.clone(),
            clip_id: w[0].clip_id.clone(),
        });
    }
    Ok(out)
}

/// Every stage after segmentation, in order, sequentially.
pub fn process(
    clips: Vec<ClipRecord>,
    rewriter: &dyn CaptionRewriter,
    tokenizer: &dyn Tokenizer,
    config: &PipelineConfig,
) -> (Vec<ClipRecord>, CorpusStats) {
    let clips = filter_duration(clips);
    let clips: Vec<ClipRecord> = clips
        .into_iter()
        .map(|c| rewrite_caption(c, rewriter, tokenizer))
        .collect();
    let clips = filter_caption(clips, config.min_tokens, tokenizer);
    let clips = exclude_reviewed(clips, &config.reviewed);
    let stats = corpus_stats(&clips);
    (clips, stats)
}
