//! Concurrent fan-out of agent calls and rayon-parallel sessions and trials.

use std::time::Instant;

use rayon::prelude::*;

use vidpanel_core::agents::{AgentBackend, AgentProfile, AgentRequest, BackendError};
use vidpanel_core::domain::QaTask;
use vidpanel_core::harness::{simulate_trial, EvalReport, HarnessError, SimReport, SimSpec, TaskResult, TrialResult};
use vidpanel_core::orchestrator::{run_question, RunConfig, SessionError, SessionOutcome};
use vidpanel_core::perception::SimilarityScorer;

/// Runs the calls of one stage on up to `max_agents` threads; results keep call order.
pub struct Concurrent<B> {
    pub inner: B,
    pub max_agents: usize,
}

impl<B: AgentBackend> AgentBackend for Concurrent<B> {
    fn invoke(&self, agent: &AgentProfile, request: &AgentRequest<'_>) -> Result<String, BackendError> {
        self.inner.invoke(agent, request)
    }

    fn invoke_all(&self, calls: &[(&AgentProfile, AgentRequest<'_>)]) -> Vec<Result<String, BackendError>> {
        if self.max_agents <= 1 || calls.len() <= 1 {
            return self.inner.invoke_all(calls);
        }
        let mut out = Vec::with_capacity(calls.len());
        for group in calls.chunks(self.max_agents) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|(a, r)| s.spawn(move || self.inner.invoke(a, r)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| {
                            Err(BackendError::Transport {
                                attempts: 1,
                                message: "agent call panicked".into(),
                            })
                        })
                    })
                    .collect()
            });
            out.extend(results);
        }
        out
    }
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub type Session = Result<SessionOutcome, SessionError>;

/// Evaluates tasks on up to `sessions` threads. Wall time is attached only when `timing`.
pub fn evaluate_parallel(
    tasks: &[QaTask],
    team: &[AgentProfile],
    config: &RunConfig,
    backend: &dyn AgentBackend,
    scorer: &dyn SimilarityScorer,
    sessions: usize,
    timing: bool,
) -> Result<(EvalReport, Vec<Session>), HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let runs: Vec<(Session, f64)> = pool(sessions.max(1)).install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let start = Instant::now();
                let s = run_question(t, team, config, backend, scorer);
                (s, start.elapsed().as_secs_f64() * 1000.0)
            })
            .collect()
    });
    let mut results = Vec::with_capacity(tasks.len());
    let mut out = Vec::with_capacity(tasks.len());
    for (task, (session, ms)) in tasks.iter().zip(runs) {
        let mut r = TaskResult::from_session(task, &session);
        if timing {
            r.wall_ms = Some(ms);
        }
        results.push(r);
        out.push(session);
    }
    Ok((EvalReport::reduce(results, config.max_rounds), out))
}

/// Simulates every trial on up to `threads` threads; output is independent of `threads`.
pub fn simulate_parallel(spec: &SimSpec, threads: usize) -> Result<(SimReport, Vec<TrialResult>), HarnessError> {
    spec.validate()?;
    let team = spec.team();
    let backend = spec.backend();
    let trials: Vec<TrialResult> = pool(threads.max(1)).install(|| {
        (0..spec.trials)
            .into_par_iter()
            .map(|i| simulate_trial(spec, i, &team, &backend))
            .collect()
    });
    Ok((SimReport::reduce(&trials, spec.config.max_rounds), trials))
}
