//! Prompt templates and `{Name}` placeholder rendering.
//!
//! A line carrying the `(If have)` marker is optional: when every placeholder on it is
//! bound to empty text the whole line is dropped, otherwise only the marker is removed.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

pub type Bindings = BTreeMap<String, String>;

const OPTIONAL_MARKER: &str = "(If have)";

pub const DECIDE_WATCH: &str = "You are given a single-choice question, options, subtitles, and some frames of the long video. You should not only look at the textual information but also consider the input visual information, taking everything into account. If you can answer the question accurately and comprehensively based on the existing information, especially the visual information, and further watching the entire video will not significantly improve the quality of the answer, then you don't need to watch the entire video and can answer 'No.'. However, if the existing information is not sufficient to fully answer the question, and watching the entire video may obtain information crucial for answering the question, please reply 'Yes'
The frame tokens: {Frame tokens}
{Question}
{Options}
{Subtitiles}(If have)
Output:{Yes/No}";

pub const KEY_INFO: &str = "Given four randomly sampled frames from a long video, subtitles, a question, and multiple-choice options, identify the key information needed to answer the question. Focus on visual cues, context, and temporal relationships within the frames. Limit your response to 50 words.
The frame tokens: {Frame tokens}
{Question}
{Options}
{Subtitles}(If have)
";

pub const ANSWER: &str = "Select the best answer to the following multiple-choice question based on the video and the subtitles. Respond with only the letter (A, B, C, or D) of the correct option.
The frame tokens: {Frame tokens}
{Question}
{Options}
{Subtitles} (If have)
The best answer is:";

pub const REASON: &str = "Given the video frames you've seen, and the question along with your answer, deeply analyze the logical steps and evidence from the frames that led you to provide this particular answer.
The Question is:  {Question}
The predict answer is {Predict answer}";

pub const KEY_INFO_FROM_HISTORY: &str = "Given the discussion history of the previous rounds, subtitles, a question, and multiple-choice options, identify the key information needed to answer the question. Focus on the points the agents disagreed on and the evidence that is still missing. Limit your response to 50 words.
The discussion history: {History}
{Question}
{Options}
{Subtitles}(If have)
";

pub const FINAL_ANSWER: &str = "The other agents could not reach an agreement on the following multiple-choice question. Read the discussion history, watch the frames, and select the best answer. Respond with only the letter (A, B, C, or D) of the correct option.
The discussion history: {History}
The frame tokens: {Frame tokens}
{Question}
{Options}
{Subtitles} (If have)
The best answer is:";

pub const CAPTION_REWRITE: &str = "Rewrite the following video caption so that it keeps every visual detail needed to retrieve the clip but fits within {Budget} words. Respond with the rewritten caption only.
Caption: {Caption}";

const REMOVAL_SENTENCE: &str =
    "However, this reason was deemed unconvincing, so this answer was removed from the discussion.";

/// The set of prompts an agent can be sent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptTemplate {
    DecideWatch,
    KeyInfo,
    KeyInfoFromHistory,
    Answer,
    Reason,
    /// Cross-judging prompt over `agents` anonymised candidates.
    Judge { agents: usize },
    /// History digest; `survivors` and `removed` are 1-based agent labels.
    History {
        survivors: Vec<usize>,
        removed: Option<usize>,
    },
    FinalAnswer,
    CaptionRewrite,
}

impl PromptTemplate {
    pub fn name(&self) -> &'static str {
        match self {
            PromptTemplate::DecideWatch => "decide_watch",
            PromptTemplate::KeyInfo => "key_info",
            PromptTemplate::KeyInfoFromHistory => "key_info_history",
            PromptTemplate::Answer => "answer",
            PromptTemplate::Reason => "reason",
            PromptTemplate::Judge { .. } => "judge",
            PromptTemplate::History { .. } => "history",
            PromptTemplate::FinalAnswer => "final_answer",
            PromptTemplate::CaptionRewrite => "caption_rewrite",
        }
    }

    /// Raw template text with placeholders intact.
    pub fn text(&self) -> Cow<'static, str> {
        match self {
            PromptTemplate::DecideWatch => Cow::Borrowed(DECIDE_WATCH),
            PromptTemplate::KeyInfo => Cow::Borrowed(KEY_INFO),
            PromptTemplate::KeyInfoFromHistory => Cow::Borrowed(KEY_INFO_FROM_HISTORY),
            PromptTemplate::Answer => Cow::Borrowed(ANSWER),
            PromptTemplate::Reason => Cow::Borrowed(REASON),
            PromptTemplate::Judge { agents } => Cow::Owned(judge_template(*agents)),
            PromptTemplate::History { survivors, removed } => {
                Cow::Owned(history_template(survivors, *removed))
            }
            PromptTemplate::FinalAnswer => Cow::Borrowed(FINAL_ANSWER),
            PromptTemplate::CaptionRewrite => Cow::Borrowed(CAPTION_REWRITE),
        }
    }

    /// Every template in its canonical three-agent shape, as shipped in the goldens.
    pub fn canonical_set() -> Vec<PromptTemplate> {
        alloc::vec![
            PromptTemplate::DecideWatch,
            PromptTemplate::KeyInfo,
            PromptTemplate::Answer,
            PromptTemplate::Reason,
            PromptTemplate::Judge { agents: 3 },
            PromptTemplate::History {
                survivors: alloc::vec![1, 2],
                removed: Some(3),
            },
            PromptTemplate::KeyInfoFromHistory,
            PromptTemplate::FinalAnswer,
            PromptTemplate::CaptionRewrite,
        ]
    }
}

fn number_word(n: usize) -> Cow<'static, str> {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(n)
        .map_or_else(|| Cow::Owned(n.to_string()), |w| Cow::Borrowed(*w))
}

fn judge_template(agents: usize) -> String {
    let others = agents.saturating_sub(1);
    let mut t = format!(
        "You are given the answers and the reasoning for judgment from this model and {} other model{}.\nThe question is: {{Question}}\n",
        number_word(others),
        if others == 1 { "" } else { "s" }
    );
    for k in 1..=agents {
        t.push_str(&format!(
            "The answer of {{Agent {k}}} is {{Agent {k}'s Answer}}\nthe reason is {{Agent {k}'s Reason}}\n"
        ));
    }
    t.push_str(&format!(
        "Please score the performance of these {} agents based on their reasoning. The score ranges from 1 to 10.\nPlease strictly follow the answer format! The answer format is:\n",
        number_word(agents)
    ));
    for k in 1..=agents {
        t.push_str(&format!("{{Agent {k}'s Score}}: 1-10\n"));
    }
    t.push_str("The reason is: {Reason}");
    t
}

fn history_template(survivors: &[usize], removed: Option<usize>) -> String {
    let mut lines: Vec<String> = Vec::new();
    for &k in survivors {
        lines.push(format!("Agent {k}'s answer is: {{Agent {k}'s Answer}}."));
        lines.push(format!("Reason: {{Agent {k}'s Reason}}."));
        lines.push(format!("The final score is : {{Agent {k}'s Score}}."));
    }
    if let Some(r) = removed {
        lines.push(format!("Removed {{Agent {r}}} Answer"));
        lines.push(format!("Answer: {{Agent {r}'s Answer}}"));
        lines.push(format!("Reason {{Agent {r}'s Reason}}"));
        lines.push(REMOVAL_SENTENCE.to_string());
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template `{template}` needs binding `{name}`")]
    MissingBinding { template: &'static str, name: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: &'static str },
}

/// Placeholder names declared by a template, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = &after[..close];
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &after[close + 1..];
    }
    out
}

/// Substitutes every `{Name}` in `template` from `bindings`.
pub fn render_prompt(template: &PromptTemplate, bindings: &Bindings) -> Result<String, PromptError> {
    let name = template.name();
    let text = template.text();
    let mut lines: Vec<String> = Vec::new();
    for line in text.split('\n') {
        let optional = line.contains(OPTIONAL_MARKER);
        let mut rendered = String::with_capacity(line.len());
        let mut all_empty = true;
        let mut rest = line;
        while let Some(open) = rest.find('{') {
            rendered.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or(PromptError::Unterminated { template: name })?;
            let key = &after[..close];
            let value = bindings.get(key).ok_or_else(|| PromptError::MissingBinding {
                template: name,
                name: key.to_string(),
            })?;
            all_empty &= value.is_empty();
            rendered.push_str(value);
            rest = &after[close + 1..];
        }
        rendered.push_str(rest);
        if optional {
            if all_empty {
                continue;
            }
            rendered = rendered
                .replace(&format!(" {OPTIONAL_MARKER}"), "")
                .replace(OPTIONAL_MARKER, "");
        }
        lines.push(rendered);
    }
    Ok(lines.join("\n"))
}

/// Bindings that map each placeholder to itself, so rendering reproduces the raw template.
pub fn identity_bindings(template: &PromptTemplate) -> Bindings {
    placeholders(&template.text())
        .into_iter()
        .map(|p| (p.to_string(), format!("{{{p}}}")))
        .collect()
}
