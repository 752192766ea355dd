//! Evaluation reports, protocol simulation and selection-mode answer gathering.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentProfile, JudgeModel, StochasticBackend};
use crate::deliberation::collect_answers;
use crate::domain::{Answer, OptionLetter, QaTask, TaskOption, VideoRef};
use crate::orchestrator::{
    run_question, DecidedBy, Event, RunConfig, SessionError, SessionOutcome, TraceEvent,
};
use crate::perception::{perceive_all, HashScorer, RoundSeeds, SimilarityScorer};
use crate::selection::{pseudo_label, AnswerTable};
use crate::seed::SeedMixer;

/// Result of one evaluated task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub answer: Option<OptionLetter>,
    pub gold: Option<OptionLetter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<DecidedBy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_decided: Option<u32>,
    pub mean_frames: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl TaskResult {
    pub fn from_session(task: &QaTask, result: &Result<SessionOutcome, SessionError>) -> Self {
        match result {
            Ok(o) => Self {
                task_id: task.task_id.clone(),
                answer: Some(o.final_answer.answer),
                gold: task.gold_answer,
                decided_by: Some(o.final_answer.decided_by),
                round_decided: Some(o.final_answer.round_decided),
                mean_frames: o.mean_frames,
                error: None,
                wall_ms: None,
            },
            Err(e) => Self {
                task_id: task.task_id.clone(),
                answer: None,
                gold: task.gold_answer,
                decided_by: None,
                round_decided: None,
                mean_frames: 0.0,
                error: Some(e.kind.to_string()),
                wall_ms: None,
            },
        }
    }

    /// `None` without gold; errored sessions count as wrong.
    pub fn correct(&self) -> Option<bool> {
        self.gold.map(|g| self.answer == Some(g))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    /// Over tasks with gold answers only; absent when no task has gold.
    pub accuracy: Option<f64>,
    pub graded: usize,
    pub correct: usize,
    /// `round_histogram[r - 1]` counts sessions decided in round `r`.
    pub round_histogram: Vec<usize>,
    pub errored: usize,
    /// Mean of per-session mean frame counts over sessions that completed.
    pub mean_frames: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_wall_ms: Option<f64>,
}

impl EvalReport {
    /// Sequential reduction over completed sessions, in the given order.
    pub fn reduce(tasks: Vec<TaskResult>, max_rounds: u32) -> Self {
        let mut histogram = alloc::vec![0usize; max_rounds as usize];
        let (mut graded, mut correct, mut errored) = (0, 0, 0);
        let (mut frames, mut completed) = (0.0, 0usize);
        let (mut wall, mut timed) = (0.0, 0usize);
        for t in &tasks {
            if let Some(c) = t.correct() {
                graded += 1;
                correct += usize::from(c);
            }
            match t.round_decided {
                Some(r) if r >= 1 => {
                    let slot = (r - 1) as usize;
                    if slot >= histogram.len() {
                        histogram.resize(slot + 1, 0);
                    }
                    histogram[slot] += 1;
                    frames += t.mean_frames;
                    completed += 1;
                }
                _ => errored += 1,
            }
            if let Some(w) = t.wall_ms {
                wall += w;
                timed += 1;
            }
        }
        Self {
            accuracy: (graded > 0).then(|| correct as f64 / graded as f64),
            graded,
            correct,
            round_histogram: histogram,
            errored,
            mean_frames: if completed > 0 { frames / completed as f64 } else { 0.0 },
            mean_wall_ms: (timed > 0).then(|| wall / timed as f64),
            tasks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("agent `{agent_id}` failed during selection on task `{task_id}`: {message}")]
    Selection {
        task_id: String,
        agent_id: String,
        message: String,
    },
}

/// Runs every task in order and reduces the results.
pub fn evaluate(
    tasks: &[QaTask],
    team: &[AgentProfile],
    config: &RunConfig,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
) -> Result<(EvalReport, Vec<Result<SessionOutcome, SessionError>>), HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let sessions: Vec<_> = tasks
        .iter()
        .map(|t| run_question(t, team, config, backend, scorer))
        .collect();
    let results = tasks
        .iter()
        .zip(&sessions)
        .map(|(t, s)| TaskResult::from_session(t, s))
        .collect();
    Ok((EvalReport::reduce(results, config.max_rounds), sessions))
}

/// The transcript of a session, whether it finished or failed.
pub fn transcript_of(result: &Result<SessionOutcome, SessionError>) -> &[TraceEvent] {
    match result {
        Ok(o) => &o.transcript,
        Err(e) => &e.transcript,
    }
}

/// Round-1 answers from every library agent, without consensus or reflection.
///
/// Perception and answering follow the session path; failed agents record `Invalid`.
pub fn gather_selection_answers(
    tasks: &[&QaTask],
    library: &[AgentProfile],
    config: &RunConfig,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
) -> Result<AnswerTable, HarnessError> {
    let refs: Vec<&AgentProfile> = library.iter().collect();
    let mut rows = Vec::with_capacity(tasks.len());
    for task in tasks {
        let task = if config.subtitles {
            (*task).clone()
        } else {
            task.without_subtitles()
        };
        let seeds = RoundSeeds {
            session: SeedMixer::new(config.seed)
                .with_str("selection")
                .with_str(&task.task_id)
                .finish(),
            round: 1,
        };
        let outcomes = perceive_all(&refs, &task, seeds, None, backend, scorer, &config.perception);
        let mut answered = Vec::new();
        let mut perceived = Vec::new();
        let mut row = alloc::vec![Answer::Invalid; library.len()];
        for (i, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(o) => {
                    answered.push(i);
                    perceived.push(o);
                }
                Err(e) if e.is_fatal() => {
                    return Err(HarnessError::Selection {
                        task_id: task.task_id.clone(),
                        agent_id: library[i].agent_id.clone(),
                        message: e.to_string(),
                    })
                }
                Err(e) => tracing::warn!(agent = %library[i].agent_id, task = %task.task_id, error = %e, "perception failed"),
            }
        }
        let ok_refs: Vec<&AgentProfile> = answered.iter().map(|&i| refs[i]).collect();
        let set = collect_answers(&ok_refs, &perceived, &task, seeds, backend).map_err(|e| {
            HarnessError::Selection {
                task_id: task.task_id.clone(),
                agent_id: match &e {
                    crate::deliberation::DeliberationError::Fatal { agent_id, .. } => agent_id.clone(),
                    _ => String::new(),
                },
                message: e.to_string(),
            }
        })?;
        for (&i, reply) in answered.iter().zip(set.replies) {
            row[i] = reply.answer;
        }
        rows.push((task.task_id.clone(), row));
    }
    Ok(AnswerTable {
        agent_ids: library.iter().map(|a| a.agent_id.clone()).collect(),
        rows,
    })
}

fn d_options() -> usize {
    4
}

/// A synthetic experiment: stochastic agents with known accuracies on generated tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub accuracies: Vec<f64>,
    #[serde(default = "d_options")]
    pub option_count: usize,
    #[serde(default)]
    pub judge: JudgeModel,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub keep_transcripts: bool,
}

impl SimSpec {
    pub fn new(accuracies: Vec<f64>, trials: usize, seed: u64) -> Self {
        Self {
            accuracies,
            option_count: d_options(),
            judge: JudgeModel::default(),
            trials,
            seed,
            config: RunConfig::default(),
            keep_transcripts: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.accuracies.is_empty() {
            return bad("at least one agent accuracy is required".into());
        }
        if let Some(p) = self.accuracies.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("accuracy {p} is outside [0, 1]"));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(2..=4).contains(&self.option_count) {
            return bad(format!("option_count {} is outside 2..=4", self.option_count));
        }
        for band in [self.judge.correct, self.judge.wrong] {
            if band.low == 0 || band.low > band.high || band.high > 10 {
                return bad(format!("judge band {}..={} is outside 1..=10", band.low, band.high));
            }
        }
        self.config.validate().map_err(HarnessError::InvalidSpec)
    }

    /// Agents `agent1..agentN`, each with selection accuracy equal to its true accuracy.
    pub fn team(&self) -> Vec<AgentProfile> {
        self.accuracies
            .iter()
            .enumerate()
            .map(|(i, &p)| AgentProfile::stochastic(&format!("agent{}", i + 1), p).with_selection_accuracy(p))
            .collect()
    }

    pub fn backend(&self) -> StochasticBackend {
        StochasticBackend {
            judge: self.judge,
            answer_space: self.option_count,
            ..StochasticBackend::default()
        }
    }

    pub fn scorer(&self) -> HashScorer {
        HashScorer { seed: self.seed }
    }
}

/// Generates trial `index`'s task. Every task lists four options; the gold letter is
/// uniform over the first `option_count`, which are also the only ones agents answer with.
pub fn synth_task(spec: &SimSpec, index: usize) -> QaTask {
    let mut rng = SeedMixer::new(spec.seed).with_str("task").with_u64(index as u64).rng();
    let options: Vec<TaskOption> = OptionLetter::ALL
        .iter()
        .map(|&key| TaskOption {
            key,
            text: format!("candidate event {key}"),
        })
        .collect();
    let gold = options[rng.gen_range(0..spec.option_count)].key;
    let frame_count = rng.gen_range(600..7200);
    QaTask {
        task_id: format!("sim-{index:06}"),
        video: VideoRef {
            video_id: format!("simvid-{index:06}"),
            frame_count,
            duration_s: f64::from(frame_count) / 2.0,
            frame_locator: String::new(),
        },
        question: format!("Which event happens in synthetic video {index}?"),
        options,
        subtitles: None,
        gold_answer: Some(gold),
    }
}

/// Per-elimination bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationCheck {
    /// The removed agent's answer that round was wrong.
    pub removed_wrong: bool,
    /// Some judged agent answered wrong that round.
    pub wrong_existed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub gold: OptionLetter,
    pub round1_answers: Vec<Answer>,
    pub round1_consensus: Option<OptionLetter>,
    pub final_answer: Option<OptionLetter>,
    pub stop_round: Option<u32>,
    pub eliminations: Vec<EliminationCheck>,
    pub mean_frames: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Vec<TraceEvent>>,
}

/// Extracts trial statistics from a session transcript alone.
pub fn trial_from_transcript(index: usize, gold: OptionLetter, transcript: &[TraceEvent]) -> TrialResult {
    let mut round_answers: BTreeMap<u32, BTreeMap<String, Answer>> = BTreeMap::new();
    let mut round1_consensus = None;
    let mut final_answer = None;
    let mut stop_round = None;
    let mut eliminations = Vec::new();
    let mut frames = (0usize, 0usize);
    for e in transcript {
        match &e.event {
            Event::Perceive { frame_count, .. } => {
                frames.0 += frame_count;
                frames.1 += 1;
            }
            Event::Answer { round, reply } if reply.failure.is_none() => {
                round_answers
                    .entry(*round)
                    .or_default()
                    .insert(reply.agent_id.clone(), reply.answer);
            }
            Event::Consensus { round: 1, answer, .. } => round1_consensus = *answer,
            Event::Eliminate { round, totals, removed } => {
                let answers = round_answers.get(round);
                let wrong = |id: &str| answers.and_then(|a| a.get(id)).is_none_or(|a| *a != Answer::Letter(gold));
                eliminations.push(EliminationCheck {
                    removed_wrong: wrong(removed),
                    wrong_existed: totals.iter().any(|(id, _)| wrong(id)),
                });
            }
            Event::Finalize {
                answer, round_decided, ..
            } => {
                final_answer = Some(*answer);
                stop_round = Some(*round_decided);
            }
            _ => {}
        }
    }
    let round1_answers = round_answers
        .get(&1)
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    TrialResult {
        index,
        gold,
        round1_answers,
        round1_consensus,
        final_answer,
        stop_round,
        eliminations,
        mean_frames: if frames.1 > 0 {
            frames.0 as f64 / frames.1 as f64
        } else {
            0.0
        },
        transcript: None,
    }
}

/// Runs one synthetic trial through the full protocol.
pub fn simulate_trial(spec: &SimSpec, index: usize, team: &[AgentProfile], backend: &StochasticBackend) -> TrialResult {
    let task = synth_task(spec, index);
    let gold = task.gold_answer.expect("synthetic tasks carry gold");
    let scorer = spec.scorer();
    let config = RunConfig {
        seed: SeedMixer::new(spec.seed).with_u64(spec.config.seed).finish(),
        ..spec.config.clone()
    };
    let session = run_question(&task, team, &config, backend, &scorer);
    let transcript = transcript_of(&session);
    let mut trial = trial_from_transcript(index, gold, transcript);
    if spec.keep_transcripts {
        trial.transcript = Some(transcript.to_vec());
    }
    trial
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: usize,
    pub round1_consensus_rate: f64,
    pub round1_consensus_correct_rate: f64,
    pub round1_wrong_consensus_rate: f64,
    pub round1_plurality_accuracy: f64,
    pub final_accuracy: f64,
    /// Standard error of `final_accuracy`.
    pub final_accuracy_se: f64,
    pub eliminations: usize,
    pub eliminations_with_wrong_agent: usize,
    /// Fraction of eliminations removing a wrong agent, among those where one existed.
    pub elimination_correctness: Option<f64>,
    /// `stop_histogram[r - 1]` counts trials decided in round `r`.
    pub stop_histogram: Vec<usize>,
    pub errored: usize,
    pub mean_frames: f64,
}

impl SimReport {
    pub fn reduce(trials: &[TrialResult], max_rounds: u32) -> Self {
        let n = trials.len().max(1) as f64;
        let rate = |count: usize| count as f64 / n;
        let mut stop = alloc::vec![0usize; max_rounds as usize];
        let (mut consensus, mut consensus_ok, mut plural_ok, mut final_ok, mut errored) = (0, 0, 0, 0, 0);
        let (mut elim, mut elim_wrong, mut elim_ok) = (0, 0, 0);
        let mut frames = 0.0;
        for t in trials {
            if let Some(c) = t.round1_consensus {
                consensus += 1;
                consensus_ok += usize::from(c == t.gold);
            }
            let plural = pseudo_label(&t.round1_answers).map(|(l, _)| l);
            plural_ok += usize::from(plural == Some(t.gold));
            final_ok += usize::from(t.final_answer == Some(t.gold));
            match t.stop_round {
                Some(r) if r >= 1 && (r as usize) <= stop.len() => stop[(r - 1) as usize] += 1,
                _ => errored += 1,
            }
            for e in &t.eliminations {
                elim += 1;
                if e.wrong_existed {
                    elim_wrong += 1;
                    elim_ok += usize::from(e.removed_wrong);
                }
            }
            frames += t.mean_frames;
        }
        let acc = rate(final_ok);
        Self {
            trials: trials.len(),
            round1_consensus_rate: rate(consensus),
            round1_consensus_correct_rate: rate(consensus_ok),
            round1_wrong_consensus_rate: rate(consensus - consensus_ok),
            round1_plurality_accuracy: rate(plural_ok),
            final_accuracy: acc,
            final_accuracy_se: libm::sqrt(acc * (1.0 - acc) / n),
            eliminations: elim,
            eliminations_with_wrong_agent: elim_wrong,
            elimination_correctness: (elim_wrong > 0).then(|| elim_ok as f64 / elim_wrong as f64),
            stop_histogram: stop,
            errored,
            mean_frames: frames / n,
        }
    }
}

/// Sequential simulation of every trial.
pub fn simulate(spec: &SimSpec) -> Result<(SimReport, Vec<TrialResult>), HarnessError> {
    spec.validate()?;
    let team = spec.team();
    let backend = spec.backend();
    let trials: Vec<TrialResult> = (0..spec.trials)
        .map(|i| simulate_trial(spec, i, &team, &backend))
        .collect();
    Ok((SimReport::reduce(&trials, spec.config.max_rounds), trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn result(gold: Option<OptionLetter>, answer: Option<OptionLetter>, round: Option<u32>) -> TaskResult {
        TaskResult {
            task_id: "t".into(),
            answer,
            gold,
            decided_by: round.map(|_| DecidedBy::Consensus),
            round_decided: round,
            mean_frames: 16.0,
            error: round.is_none().then(|| "boom".into()),
            wall_ms: None,
        }
    }

    #[test]
    fn accuracy_counts_errors_as_wrong() {
        use OptionLetter::*;
        let mut tasks: Vec<TaskResult> = (0..8).map(|_| result(Some(A), Some(A), Some(1))).collect();
        tasks.push(result(Some(A), Some(B), Some(2)));
        tasks.push(result(Some(A), None, None));
        let r = EvalReport::reduce(tasks, 3);
        assert_eq!(r.accuracy, Some(0.8));
        assert_eq!(r.round_histogram, vec![8, 1, 0]);
        assert_eq!(r.errored, 1);
        assert_eq!(r.round_histogram.iter().sum::<usize>() + r.errored, 10);
    }

    #[test]
    fn accuracy_absent_without_gold() {
        let r = EvalReport::reduce(vec![result(None, Some(OptionLetter::C), Some(1))], 3);
        assert_eq!(r.accuracy, None);
        assert_eq!(r.tasks[0].answer, Some(OptionLetter::C));
    }

    #[test]
    fn perfect_team_is_perfect() {
        let (r, _) = simulate(&SimSpec::new(vec![1.0, 1.0, 1.0], 200, 5)).unwrap();
        assert_eq!(r.final_accuracy, 1.0);
        assert_eq!(r.stop_histogram, vec![200, 0, 0]);
        assert_eq!(r.eliminations, 0);
    }

    #[test]
    fn evaluate_stochastic_perfect_team() {
        let spec = SimSpec::new(vec![1.0, 1.0, 1.0], 10, 1);
        let tasks: Vec<QaTask> = (0..10).map(|i| synth_task(&spec, i)).collect();
        let (r, _) = evaluate(&tasks, &spec.team(), &spec.config, &spec.backend(), &spec.scorer()).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
    }

    #[test]
    fn simulation_is_reproducible() {
        let spec = SimSpec::new(vec![0.6, 0.5, 0.4], 300, 11);
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
    }

    #[test]
    fn gold_letters_are_spread() {
        let spec = SimSpec::new(vec![0.5], 400, 2);
        let mut counts = [0; 4];
        for i in 0..400 {
            counts[synth_task(&spec, i).gold_answer.unwrap().index()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 60), "{counts:?}");
    }

    #[test]
    fn spec_validation() {
        assert!(SimSpec::new(vec![1.2], 10, 0).validate().is_err());
        assert!(SimSpec::new(vec![0.5], 0, 0).validate().is_err());
        assert!(SimSpec::new(vec![], 10, 0).validate().is_err());
        assert!(SimSpec::new(vec![0.5, 0.0, 1.0], 1, 0).validate().is_ok());
    }

    #[test]
    fn oracle_judge_always_removes_a_wrong_agent() {
        let mut spec = SimSpec::new(vec![0.9, 0.5, 0.5], 2000, 3);
        spec.judge = JudgeModel::oracle();
        let (r, _) = simulate(&spec).unwrap();
        assert!(r.eliminations_with_wrong_agent > 0);
        assert_eq!(r.elimination_correctness, Some(1.0));
    }
}
