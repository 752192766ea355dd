use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentBackend, AgentProfile, AgentRequest, BackendError, RequestBody};
use crate::domain::{Answer, OptionLetter, QaTask};
use crate::seed::SeedMixer;

/// Inclusive integer score range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBand {
    pub low: u8,
    pub high: u8,
}

impl ScoreBand {
    pub const fn new(low: u8, high: u8) -> Self {
        Self { low, high }
    }
}

/// How simulated judges score a candidate, by whether its answer matches gold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeModel {
    pub correct: ScoreBand,
    pub wrong: ScoreBand,
}

impl JudgeModel {
    /// 10 for gold-matching answers, 1 otherwise.
    pub const fn oracle() -> Self {
        Self {
            correct: ScoreBand::new(10, 10),
            wrong: ScoreBand::new(1, 1),
        }
    }

    pub const fn banded() -> Self {
        Self {
            correct: ScoreBand::new(7, 10),
            wrong: ScoreBand::new(1, 4),
        }
    }

    /// Overlapping bands: informative on average, often wrong on a single judgment.
    pub const fn noisy() -> Self {
        Self {
            correct: ScoreBand::new(3, 10),
            wrong: ScoreBand::new(1, 8),
        }
    }
}

impl Default for JudgeModel {
    fn default() -> Self {
        Self::banded()
    }
}

/// Seeded synthetic agent. Every reply depends only on the request seed and content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticBackend {
    pub judge: JudgeModel,
    /// Probability of a "Yes" watch-whole-video decision.
    pub watch_probability: f64,
    /// Answers are drawn from the first `answer_space` options of a task.
    #[serde(default = "full_space")]
    pub answer_space: usize,
}

fn full_space() -> usize {
    OptionLetter::ALL.len()
}

impl Default for StochasticBackend {
    fn default() -> Self {
        Self {
            judge: JudgeModel::default(),
            watch_probability: 0.5,
            answer_space: full_space(),
        }
    }
}

fn draw_answer(task: &QaTask, accuracy: f64, space: usize, rng: &mut impl Rng) -> OptionLetter {
    let keys: Vec<OptionLetter> = task.options.iter().take(space.max(1)).map(|o| o.key).collect();
    let keys = if keys.is_empty() { OptionLetter::ALL.to_vec() } else { keys };
    let hit = rng.gen::<f64>() < accuracy;
    match task.gold_answer {
        Some(gold) if hit => gold,
        Some(gold) => {
            let wrong: Vec<OptionLetter> = keys.into_iter().filter(|&k| k != gold).collect();
            if wrong.is_empty() {
                gold
            } else {
                wrong[rng.gen_range(0..wrong.len())]
            }
        }
        None => keys[rng.gen_range(0..keys.len())],
    }
}

impl AgentBackend for StochasticBackend {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        let accuracy = agent
            .accuracy
            .ok_or_else(|| BackendError::Unconfigured(agent.agent_id.clone()))?;
        let mut rng = SeedMixer::new(request.seed).rng();
        let question = request.task.map_or("", |t| t.question.as_str());
        let text = match &request.body {
            RequestBody::DecideWatch { .. } => {
                if rng.gen::<f64>() < self.watch_probability {
                    "Yes.".into()
                } else {
                    "No.".into()
                }
            }
            RequestBody::KeyInfo { .. } => format!("Frames showing: {question}"),
            RequestBody::KeyInfoFromHistory { .. } => {
                format!("Re-check the disputed moments for: {question}")
            }
            RequestBody::Answer { .. } | RequestBody::FinalAnswer { .. } => {
                let task = request
                    .task
                    .ok_or_else(|| BackendError::Malformed("answer request without task".into()))?;
                format!("The best answer is: {}", draw_answer(task, accuracy, self.answer_space, &mut rng))
            }
            RequestBody::Reason { predicted, .. } => {
                format!("{} chose {predicted} from the sampled frames.", agent.agent_id)
            }
            RequestBody::Judge { candidates } => {
                let gold = request.task.and_then(|t| t.gold_answer);
                let mut out = String::new();
                for (i, c) in candidates.iter().enumerate() {
                    let band = match (gold, c.answer) {
                        (Some(g), Answer::Letter(l)) if g == l => self.judge.correct,
                        _ => self.judge.wrong,
                    };
                    let score = rng.gen_range(band.low..=band.high);
                    out.push_str(&format!("Agent {}'s Score: {score}\n", i + 1));
                }
                out.push_str("The reason is: scored against the visible evidence.");
                out
            }
            RequestBody::Summarize { text, budget_words } => text
                .split_whitespace()
                .take(*budget_words)
                .collect::<Vec<_>>()
                .join(" "),
        };
        Ok(text)
    }
}
