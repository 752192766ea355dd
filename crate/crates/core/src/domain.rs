//! Tasks, answers, frames and per-round protocol records.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// One of the four multiple-choice option keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionLetter {
    A,
    B,
    C,
    D,
}

impl OptionLetter {
    pub const ALL: [OptionLetter; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(Self::A),
            'B' => Some(Self::B),
            'C' => Some(Self::C),
            'D' => Some(Self::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A parsed agent answer. `Invalid` is a value, not an error: it never counts as a vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Answer {
    Letter(OptionLetter),
    Invalid,
}

impl Answer {
    pub fn letter(self) -> Option<OptionLetter> {
        match self {
            Answer::Letter(l) => Some(l),
            Answer::Invalid => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, Answer::Letter(_))
    }
}

impl From<OptionLetter> for Answer {
    fn from(l: OptionLetter) -> Self {
        Answer::Letter(l)
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Letter(l) => write!(f, "{l}"),
            Answer::Invalid => f.write_str("Invalid"),
        }
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Answer::Letter(l) => s.serialize_char(l.as_char()),
            Answer::Invalid => s.serialize_str("Invalid"),
        }
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct AnswerVisitor;
        impl Visitor<'_> for AnswerVisitor {
            type Value = Answer;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an option letter A-D or \"Invalid\"")
            }
            fn visit_char<E: de::Error>(self, c: char) -> Result<Answer, E> {
                OptionLetter::from_char(c)
                    .map(Answer::Letter)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Char(c), &self))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Answer, E> {
                let mut chars = v.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => self.visit_char(c),
                    _ if v.eq_ignore_ascii_case("invalid") => Ok(Answer::Invalid),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_str(AnswerVisitor)
    }
}

/// Returns the first standalone option letter in `raw`.
///
/// A letter is standalone when neither neighbour is alphanumeric, so `"(C)"`, `"B."`
/// and `"answer: d"` all match while the `a` inside `"answer"` does not. Uppercase
/// letters are preferred: the lowercase pass only runs when no uppercase standalone
/// letter exists, so an article like "a" cannot shadow the real answer.
pub fn parse_answer_letter(raw: &str) -> Answer {
    let standalone = |upper_only: bool| {
        let chars: Vec<char> = raw.chars().collect();
        chars.iter().enumerate().find_map(|(i, &c)| {
            let letter = OptionLetter::from_char(c)?;
            if upper_only && !c.is_ascii_uppercase() {
                return None;
            }
            let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
            let after_ok = chars.get(i + 1).is_none_or(|n| !n.is_alphanumeric());
            (before_ok && after_ok).then_some(letter)
        })
    };
    standalone(true)
        .or_else(|| standalone(false))
        .map_or(Answer::Invalid, Answer::Letter)
}

/// A video addressed by pre-extracted frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub video_id: String,
    pub frame_count: u32,
    pub duration_s: f64,
    /// Path template; `{video_id}` and `{index}` are substituted by [`VideoRef::locate`].
    #[serde(default)]
    pub frame_locator: String,
}

impl VideoRef {
    pub fn locate(&self, index: u32) -> String {
        self.frame_locator
            .replace("{video_id}", &self.video_id)
            .replace("{index}", &index.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOption {
    pub key: OptionLetter,
    pub text: String,
}

/// One multiple-choice question about one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaTask {
    pub task_id: String,
    pub video: VideoRef,
    pub question: String,
    pub options: Vec<TaskOption>,
    #[serde(default)]
    pub subtitles: Option<String>,
    #[serde(default)]
    pub gold_answer: Option<OptionLetter>,
}

impl QaTask {
    pub fn option_text(&self, key: OptionLetter) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.key == key)
            .map(|o| o.text.as_str())
    }

    /// Options as prompt text, one `"A. text"` line per option.
    pub fn render_options(&self) -> String {
        let mut out = String::new();
        for (i, o) in self.options.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push(o.key.as_char());
            out.push_str(". ");
            out.push_str(&o.text);
        }
        out
    }

    /// Copy of the task with subtitles withheld.
    pub fn without_subtitles(&self) -> QaTask {
        QaTask {
            subtitles: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyTaskId,
    EmptyQuestion,
    OptionCount(usize),
    DuplicateOptionKey(OptionLetter),
    ZeroFrameCount,
    NonPositiveDuration,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTaskId => f.write_str("task_id is empty"),
            Violation::EmptyQuestion => f.write_str("question text is empty"),
            Violation::OptionCount(n) => write!(f, "options != 4 (found {n})"),
            Violation::DuplicateOptionKey(k) => write!(f, "duplicate option key {k}"),
            Violation::ZeroFrameCount => f.write_str("frame_count must be at least 1"),
            Violation::NonPositiveDuration => f.write_str("duration_s must be positive"),
        }
    }
}

/// Every invariant violation of `task`; empty means valid.
pub fn validate_task(task: &QaTask) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.task_id.trim().is_empty() {
        out.push(Violation::EmptyTaskId);
    }
    if task.question.trim().is_empty() {
        out.push(Violation::EmptyQuestion);
    }
    if task.options.len() != 4 {
        out.push(Violation::OptionCount(task.options.len()));
    }
    let mut seen = [false; 4];
    for o in &task.options {
        if core::mem::replace(&mut seen[o.key.index()], true) {
            let v = Violation::DuplicateOptionKey(o.key);
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    if task.video.frame_count == 0 {
        out.push(Violation::ZeroFrameCount);
    }
    if task.video.duration_s.is_nan() || task.video.duration_s <= 0.0 {
        out.push(Violation::NonPositiveDuration);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrigin {
    Rough,
    Global,
    Chunk(usize),
    Assembled,
}

/// Ordered, distinct frame indices of one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSet {
    pub video_id: String,
    pub indices: Vec<u32>,
    pub origin: FrameOrigin,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Strictly increasing and inside `[0, frame_count)`.
    pub fn is_well_formed(&self, frame_count: u32) -> bool {
        self.indices.windows(2).all(|w| w[0] < w[1])
            && self.indices.last().is_none_or(|&i| i < frame_count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub agent_id: String,
    pub answer: Answer,
    pub reason: String,
    pub raw_text: String,
    /// Backend failure note when the reply could not be obtained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub replies: Vec<AgentReply>,
    /// Per-agent judge totals; present iff the round reached Reflection.
    pub totals: Option<Vec<(String, u32)>>,
    pub removed: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn task_with(options: &[(OptionLetter, &str)], question: &str) -> QaTask {
        QaTask {
            task_id: "t1".into(),
            video: VideoRef {
                video_id: "v1".into(),
                frame_count: 100,
                duration_s: 10.0,
                frame_locator: "frames/{video_id}/{index}.jpg".into(),
            },
            question: question.into(),
            options: options
                .iter()
                .map(|(k, t)| TaskOption {
                    key: *k,
                    text: (*t).into(),
                })
                .collect(),
            subtitles: None,
            gold_answer: None,
        }
    }

    use OptionLetter::*;

    #[test]
    fn parses_template_answer() {
        assert_eq!(parse_answer_letter("The best answer is: B"), Answer::Letter(B));
        assert_eq!(parse_answer_letter("(C) is right because…"), Answer::Letter(C));
        assert_eq!(parse_answer_letter("no idea"), Answer::Invalid);
    }

    #[test]
    fn parse_tolerates_punctuation_and_case() {
        assert_eq!(parse_answer_letter("d."), Answer::Letter(D));
        assert_eq!(parse_answer_letter("[A]"), Answer::Letter(A));
        assert_eq!(parse_answer_letter("I think a good answer is C"), Answer::Letter(C));
        assert_eq!(parse_answer_letter("answer"), Answer::Invalid);
        assert_eq!(parse_answer_letter("E"), Answer::Invalid);
        assert_eq!(parse_answer_letter(""), Answer::Invalid);
    }

    #[test]
    fn valid_task_has_no_violations() {
        let t = task_with(&[(A, "a"), (B, "b"), (C, "c"), (D, "d")], "Q?");
        assert!(validate_task(&t).is_empty());
    }

    #[test]
    fn three_options_is_a_violation() {
        let t = task_with(&[(A, "a"), (B, "b"), (C, "c")], "Q?");
        assert_eq!(validate_task(&t), vec![Violation::OptionCount(3)]);
    }

    #[test]
    fn duplicate_key_is_a_violation() {
        let t = task_with(&[(A, "a"), (B, "b"), (B, "b2"), (D, "d")], "Q?");
        assert_eq!(validate_task(&t), vec![Violation::DuplicateOptionKey(B)]);
    }

    #[test]
    fn empty_question_and_bad_video() {
        let mut t = task_with(&[(A, "a"), (B, "b"), (C, "c"), (D, "d")], "  ");
        t.video.frame_count = 0;
        t.video.duration_s = 0.0;
        assert_eq!(
            validate_task(&t),
            vec![
                Violation::EmptyQuestion,
                Violation::ZeroFrameCount,
                Violation::NonPositiveDuration
            ]
        );
    }

    #[test]
    fn options_render_one_per_line() {
        let t = task_with(&[(A, "red"), (B, "blue"), (C, "green"), (D, "black")], "Q?");
        assert_eq!(t.render_options(), "A. red\nB. blue\nC. green\nD. black");
        assert_eq!(t.video.locate(7), "frames/v1/7.jpg");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn idempotent_on_own_rendering(s in ".*") {
                if let Answer::Letter(l) = parse_answer_letter(&s) {
                    let rendered = l.to_string();
                    prop_assert_eq!(parse_answer_letter(&rendered), Answer::Letter(l));
                }
            }

            #[test]
            fn single_standalone_letter_is_found(
                prefix in "[e-z ]{0,12}",
                suffix in "[e-z .]{0,12}",
                idx in 0usize..4,
            ) {
                let l = OptionLetter::ALL[idx];
                let text = alloc::format!("{prefix} {l} {suffix}");
                prop_assert_eq!(parse_answer_letter(&text), Answer::Letter(l));
            }
        }
    }
}
