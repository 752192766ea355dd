//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! Every expected value is recomputed here from first principles or from raw output files,
//! without going through the library's own reducers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vidpanel_core::agents::{AgentProfile, FixtureKey, RequestKind, ScriptedBackend, ScriptedReply};
use vidpanel_core::deliberation::{eliminate_lowest, judge_round, AnswerSet, ScoreMatrix};
use vidpanel_core::domain::{AgentReply, Answer, OptionLetter, QaTask, TaskOption, VideoRef};
use vidpanel_core::perception::{select_chunks, ChunkScore, RoundSeeds};
use vidpanel_core::selection::{rank_agents, AnswerTable};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn vidpanel(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vidpanel"))
        .args(args)
        .env("VIDPANEL_LOG", "error")
        .output()
        .expect("run vidpanel");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("json")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Runs `eval` over the scripted fixture set, returning the transcript directory.
fn eval_fixtures(dir: &Path) -> Result<(String, PathBuf), String> {
    let f = fixtures();
    let tr = dir.join("transcripts");
    let report = dir.join("report.json");
    let (code, stdout, stderr) = vidpanel(&[
        "eval",
        "--manifest",
        p(&f.join("manifest.jsonl")),
        "--agents",
        p(&f.join("agents.toml")),
        "--team",
        "a1,a2,a3",
        "--config",
        p(&f.join("config.toml")),
        "--transcripts-dir",
        p(&tr),
        "--out",
        p(&report),
    ]);
    ensure(code == 0, || format!("eval exited {code}: {stderr}"))?;
    Ok((stdout, tr))
}

/// `(session, events)` for every per-session transcript file in `dir`.
fn sessions_in(dir: &Path) -> Vec<(String, Vec<Value>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .expect("transcript dir")
        .map(|e| e.expect("entry").path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|f| (f.file_stem().unwrap().to_string_lossy().into_owned(), read_jsonl(&f)))
        .collect()
}

/// Splits one combined JSONL stream into sessions, keeping order.
fn group_sessions(events: Vec<Value>) -> Vec<(String, Vec<Value>)> {
    let mut out: Vec<(String, Vec<Value>)> = Vec::new();
    for e in events {
        let s = e["session"].as_str().expect("session").to_string();
        match out.last_mut() {
            Some((name, evs)) if *name == s => evs.push(e),
            _ => out.push((s, vec![e])),
        }
    }
    out
}

fn kind(e: &Value) -> &str {
    e["kind"].as_str().unwrap_or("")
}

fn round_of(e: &Value) -> u64 {
    e["payload"]["round"].as_u64().unwrap_or(0)
}

/// Valid round-`r` answers by agent, skipping failed replies.
fn answers_in_round(events: &[Value], r: u64) -> BTreeMap<String, String> {
    events
        .iter()
        .filter(|e| kind(e) == "answer" && round_of(e) == r)
        .filter(|e| e["payload"]["reply"]["failure"].is_null())
        .map(|e| {
            let reply = &e["payload"]["reply"];
            (
                reply["agent_id"].as_str().unwrap().to_string(),
                reply["answer"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .expect("dir")
        .map(|e| {
            let path = e.expect("entry").path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect()
}

fn c1_determinism() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (out_a, tr_a) = eval_fixtures(a.path())?;
    let (out_b, tr_b) = eval_fixtures(b.path())?;
    let elapsed = start.elapsed();
    let (ta, tb) = (dir_bytes(&tr_a), dir_bytes(&tr_b));
    ensure(ta.len() == 20, || format!("expected 20 transcripts, found {}", ta.len()))?;
    ensure(ta == tb, || "transcripts differ between runs".into())?;
    ensure(
        fs::read(a.path().join("report.json")).unwrap() == fs::read(b.path().join("report.json")).unwrap(),
        || "reports differ between runs".into(),
    )?;
    ensure(out_a == out_b, || "stdout differs between runs".into())?;
    ensure(elapsed < Duration::from_secs(10), || format!("two runs took {elapsed:?}"))?;
    Ok(format!("20 transcripts and report identical across runs, {:.2}s for both", elapsed.as_secs_f64()))
}

/// Probability that some wrong option collects a strict majority of `n` independent votes.
fn enumerate_wrong_consensus(p: f64, options: usize, n: u32) -> (f64, f64) {
    let q = (1.0 - p) / (options - 1) as f64;
    let total = options.pow(n);
    let (mut right, mut wrong) = (0.0, 0.0);
    for code in 0..total {
        let mut counts = vec![0u32; options];
        let mut prob = 1.0;
        let mut c = code;
        for _ in 0..n {
            let choice = c % options;
            c /= options;
            counts[choice] += 1;
            prob *= if choice == 0 { p } else { q };
        }
        if let Some(winner) = (0..options).find(|&o| 2 * counts[o] > n) {
            if winner == 0 {
                right += prob;
            } else {
                wrong += prob;
            }
        }
    }
    (right, wrong)
}

fn binom(n: u64, k: u64) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

fn c2_consensus_analytics() -> Outcome {
    let acc: f64 = 0.7;
    let binomial: f64 = (2..=3).map(|k| binom(3, k) * acc.powi(k as i32) * (1.0 - acc).powi(3 - k as i32)).sum();
    let (enum_right, enum_wrong) = enumerate_wrong_consensus(acc, 4, 3);
    ensure((binomial - 0.784).abs() < 1e-12, || format!("binomial oracle {binomial}"))?;
    ensure((enum_right - binomial).abs() < 1e-12, || format!("oracles disagree: {enum_right} vs {binomial}"))?;
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sim.json");
    let start = Instant::now();
    let (code, _, stderr) = vidpanel(&[
        "simulate", "--agents", "0.7,0.7,0.7", "--options", "4", "--trials", "100000", "--seed", "2024", "--out",
        p(&report),
    ]);
    let elapsed = start.elapsed();
    ensure(code == 0, || format!("simulate exited {code}: {stderr}"))?;
    let r = read_json(&report);
    let right = r["round1_consensus_correct_rate"].as_f64().unwrap();
    let wrong = r["round1_wrong_consensus_rate"].as_f64().unwrap();
    ensure((right - binomial).abs() <= 0.01, || format!("consensus-correct {right:.4} vs {binomial:.4}"))?;
    ensure((wrong - enum_wrong).abs() <= 0.005, || format!("wrong-consensus {wrong:.4} vs {enum_wrong:.4}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "consensus-correct {right:.4} (analytic {binomial:.3}), wrong-consensus {wrong:.4} (analytic {enum_wrong:.3}), {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn c3_early_stopping() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_, tr) = eval_fixtures(dir.path())?;
    let mut agreeing = 0;
    for (session, events) in sessions_in(&tr) {
        let r1 = answers_in_round(&events, 1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in r1.values().filter(|a| a.as_str() != "Invalid") {
            *counts.entry(a).or_default() += 1;
        }
        if counts.values().any(|&c| c >= 2) {
            agreeing += 1;
            let bad: Vec<&str> = events
                .iter()
                .map(kind)
                .filter(|k| matches!(*k, "judge" | "eliminate"))
                .collect();
            ensure(bad.is_empty(), || format!("{session}: round-1 agreement followed by {bad:?}"))?;
        }
    }
    ensure(agreeing > 0, || "no fixture session agreed in round 1".into())?;
    Ok(format!("{agreeing} agreeing sessions, none judged or eliminated"))
}

/// Checks elimination invariants on one session; returns the number of removals.
fn elimination_discipline(session: &str, events: &[Value], team: usize, max_rounds: usize) -> Result<usize, String> {
    let reflect: Vec<u64> = events.iter().filter(|e| kind(e) == "reflect").map(round_of).collect();
    let elim: Vec<u64> = events.iter().filter(|e| kind(e) == "eliminate").map(round_of).collect();
    for r in &reflect {
        let n = elim.iter().filter(|e| *e == r).count();
        ensure(n == 1, || format!("{session}: round {r} reflection with {n} removals"))?;
    }
    ensure(elim.len() == reflect.len(), || format!("{session}: {} removals for {} reflections", elim.len(), reflect.len()))?;
    let mut removed: BTreeSet<String> = BTreeSet::new();
    for e in events {
        let pl = &e["payload"];
        let mentioned: Vec<String> = match kind(e) {
            "perceive" => vec![pl["agent_id"].as_str().unwrap().into()],
            "answer" => vec![pl["reply"]["agent_id"].as_str().unwrap().into()],
            "consensus" => pl["active"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().into()).collect(),
            "judge" => pl["matrix"]["agents"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().into()).collect(),
            "eliminate" => pl["totals"].as_array().unwrap().iter().map(|t| t[0].as_str().unwrap().into()).collect(),
            _ => Vec::new(),
        };
        if let Some(back) = mentioned.iter().find(|m| removed.contains(*m)) {
            return Err(format!("{session}: removed agent {back} reappears in a {} event", kind(e)));
        }
        if kind(e) == "eliminate" {
            removed.insert(pl["removed"].as_str().unwrap().into());
        }
    }
    let cap = team.min(max_rounds) - 1;
    ensure(removed.len() <= cap, || format!("{session}: {} removals", removed.len()))?;
    Ok(removed.len())
}

fn c4_elimination_discipline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_, tr) = eval_fixtures(dir.path())?;
    let mut sessions = sessions_in(&tr);
    let sim = dir.path().join("sim.jsonl");
    for (judge, seed) in [("banded", "4"), ("noisy", "5")] {
        let (code, _, stderr) = vidpanel(&[
            "simulate", "--agents", "0.6,0.55,0.5", "--trials", "2000", "--seed", seed, "--judge", judge,
            "--transcripts", p(&sim),
        ]);
        ensure(code == 0, || format!("simulate exited {code}: {stderr}"))?;
        sessions.extend(group_sessions(read_jsonl(&sim)));
    }
    let mut multi = 0;
    let mut removals = 0;
    let mut max_seen = 0;
    for (s, events) in &sessions {
        let rounds: BTreeSet<u64> = events.iter().filter(|e| kind(e) == "answer").map(round_of).collect();
        if rounds.len() > 1 {
            multi += 1;
        }
        let n = elimination_discipline(s, events, 3, 3)?;
        removals += n;
        max_seen = max_seen.max(n);
    }
    ensure(multi > 0, || "no multi-round session".into())?;
    Ok(format!(
        "{} sessions ({multi} multi-round), {removals} removals, at most {max_seen} per session",
        sessions.len()
    ))
}

fn brute_select(totals: &[f64], threshold: f64) -> Vec<usize> {
    let above: Vec<usize> = (0..totals.len()).filter(|&i| totals[i] > threshold).collect();
    if !above.is_empty() {
        return above;
    }
    let max = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    vec![(0..totals.len()).find(|&i| totals[i] == max).unwrap()]
}

fn c5_chunk_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut above_cases = 0;
    for case in 0..1000 {
        let totals: Vec<f64> = (0..6)
            .map(|_| match rng.gen_range(0..4) {
                0 => rng.gen_range(0..=16) as f64 / 20.0,
                1 => 0.8,
                _ => rng.gen_range(0.0..1.2),
            })
            .collect();
        let scores: Vec<ChunkScore> = totals
            .iter()
            .enumerate()
            .map(|(chunk, &t)| ChunkScore {
                chunk,
                key_sim: t / 2.0,
                question_sim: t / 2.0,
                total: t,
            })
            .collect();
        let want = brute_select(&totals, 0.8);
        let got = select_chunks(&scores, 0.8);
        ensure(got == want, || format!("case {case}: {totals:?} gave {got:?}, expected {want:?}"))?;
        above_cases += usize::from(totals.iter().any(|&t| t > 0.8));
    }
    Ok(format!("1000 vectors, 0 mismatches ({above_cases} with a chunk above threshold)"))
}

const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

fn letter(i: usize) -> Answer {
    Answer::Letter(OptionLetter::from_char(LETTERS[i]).unwrap())
}

fn brute_rank(agent_ids: &[String], rows: &[Vec<Option<usize>>], k: usize) -> (Vec<f64>, Vec<String>) {
    let mut hits = vec![0usize; agent_ids.len()];
    for row in rows {
        let mut counts = [0usize; 4];
        for a in row.iter().flatten() {
            counts[*a] += 1;
        }
        let best = *counts.iter().max().unwrap();
        let label = (0..4).find(|&l| counts[l] == best).unwrap();
        for (h, a) in hits.iter_mut().zip(row) {
            if *a == Some(label) {
                *h += 1;
            }
        }
    }
    let acc: Vec<f64> = hits.iter().map(|&h| h as f64 / rows.len() as f64).collect();
    let mut order: Vec<usize> = (0..agent_ids.len()).collect();
    order.sort_by(|&a, &b| hits[b].cmp(&hits[a]).then(agent_ids[a].cmp(&agent_ids[b])));
    (acc, order.into_iter().take(k).map(|i| agent_ids[i].clone()).collect())
}

fn c6_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let agent_ids: Vec<String> = ["e", "b", "d", "a", "c"].iter().map(|s| s.to_string()).collect();
    let mut tied_cases = 0;
    for case in 0..200 {
        let skill: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..0.9)).collect();
        let copy = case % 3 == 0;
        let rows: Vec<Vec<Option<usize>>> = (0..150)
            .map(|_| {
                let gold = rng.gen_range(0..4);
                let mut row: Vec<Option<usize>> = skill
                    .iter()
                    .map(|&s| {
                        if rng.gen_bool(0.08) {
                            None
                        } else if rng.gen_bool(s) {
                            Some(gold)
                        } else {
                            Some(rng.gen_range(0..4))
                        }
                    })
                    .collect();
                if copy {
                    row[4] = row[2];
                }
                if row.iter().all(Option::is_none) {
                    row[0] = Some(gold);
                }
                row
            })
            .collect();
        let table = AnswerTable {
            agent_ids: agent_ids.clone(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    (format!("q{i:03}"), r.iter().map(|a| a.map_or(Answer::Invalid, letter)).collect())
                })
                .collect(),
        };
        let report = rank_agents(&table, 3).map_err(|e| format!("case {case}: {e}"))?;
        let (acc, team) = brute_rank(&agent_ids, &rows, 3);
        for (id, a) in agent_ids.iter().zip(&acc) {
            let got = report.accuracies[id];
            ensure(got == *a, || format!("case {case}: {id} accuracy {got} vs {a}"))?;
        }
        ensure(report.team == team, || format!("case {case}: team {:?} vs {team:?}", report.team))?;
        let distinct: BTreeSet<u64> = acc.iter().map(|a| a.to_bits()).collect();
        tied_cases += usize::from(distinct.len() < acc.len());
    }
    ensure(tied_cases > 0, || "no accuracy ties exercised".into())?;
    Ok(format!("200 tables of 150 tasks x 5 agents match, {tied_cases} with accuracy ties"))
}

fn judge_task() -> QaTask {
    QaTask {
        task_id: "judge-oracle".into(),
        video: VideoRef {
            video_id: "v".into(),
            frame_count: 960,
            duration_s: 32.0,
            frame_locator: String::new(),
        },
        question: "Which option?".into(),
        options: (0..4)
            .map(|i| TaskOption {
                key: OptionLetter::from_char(LETTERS[i]).unwrap(),
                text: format!("option {i}"),
            })
            .collect(),
        subtitles: None,
        gold_answer: None,
    }
}

fn c7_judge_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let task = judge_task();
    let (mut clamped, mut neutral, mut ties) = (0, 0, 0);
    for case in 0..1000 {
        let n = rng.gen_range(2..=5);
        let ids: Vec<String> = (0..n).map(|i| format!("judge{}", (i * 7 + case) % 10)).collect();
        let ids: Vec<String> = {
            let mut seen = BTreeSet::new();
            ids.into_iter().filter(|i| seen.insert(i.clone())).collect()
        };
        let n = ids.len();
        if n < 2 {
            continue;
        }
        let profiles: Vec<AgentProfile> = ids.iter().map(|i| AgentProfile::scripted(i)).collect();
        let active: Vec<&AgentProfile> = profiles.iter().collect();
        let acc: BTreeMap<String, f64> =
            ids.iter().map(|i| (i.clone(), [0.5, 0.6, 0.7][rng.gen_range(0..3)])).collect();
        let mut backend = ScriptedBackend::new();
        let mut expected: Vec<Vec<i64>> = Vec::new();
        for id in &ids {
            let key = FixtureKey {
                agent_id: id.clone(),
                task_id: task.task_id.clone(),
                kind: RequestKind::Judge,
                round: None,
            };
            match rng.gen_range(0..10) {
                0 => {
                    backend.insert(key, ScriptedReply::Text("Every answer seems fine.".into()));
                    expected.push(vec![5; n]);
                    neutral += 1;
                }
                1 => {
                    backend.insert(key, ScriptedReply::TransportFailure("timeout".into()));
                    expected.push(vec![5; n]);
                    neutral += 1;
                }
                _ => {
                    let raw: Vec<i64> = (0..n).map(|_| rng.gen_range(-2..=13)).collect();
                    let text: String = raw
                        .iter()
                        .enumerate()
                        .map(|(k, v)| format!("Agent {}'s Score: {v}\n", k + 1))
                        .collect();
                    backend.insert(key, ScriptedReply::Text(text));
                    clamped += raw.iter().filter(|v| !(1..=10).contains(*v)).count();
                    expected.push(raw.iter().map(|v| (*v).clamp(1, 10)).collect());
                }
            }
        }
        let answers = AnswerSet {
            replies: ids
                .iter()
                .map(|id| AgentReply {
                    agent_id: id.clone(),
                    answer: letter(0),
                    reason: "because".into(),
                    raw_text: "A".into(),
                    failure: None,
                })
                .collect(),
        };
        let seeds = RoundSeeds { session: case as u64, round: 1 };
        let matrix = judge_round(&active, &task, &answers, seeds, &backend).map_err(|e| format!("case {case}: {e}"))?;
        evaluate_matrix(case, &matrix, &ids, &expected, &acc, &mut ties)?;
        if case % 2 == 0 {
            let raw: Vec<Vec<u8>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0..=15)).collect()).collect();
            let expected: Vec<Vec<i64>> = raw
                .iter()
                .map(|r| r.iter().map(|&v| i64::from(v).clamp(1, 10)).collect())
                .collect();
            clamped += raw.iter().flatten().filter(|v| !(1..=10).contains(*v)).count();
            let matrix = ScoreMatrix::from_rows(ids.clone(), raw);
            evaluate_matrix(case, &matrix, &ids, &expected, &acc, &mut ties)?;
        }
    }
    ensure(clamped > 0 && neutral > 0 && ties > 0, || format!("paths not exercised: {clamped} {neutral} {ties}"))?;
    Ok(format!("1000 matrices match ({clamped} clamped entries, {neutral} neutral rows, {ties} tied minima)"))
}

fn evaluate_matrix(
    case: usize,
    matrix: &ScoreMatrix,
    ids: &[String],
    expected: &[Vec<i64>],
    acc: &BTreeMap<String, f64>,
    ties: &mut usize,
) -> Result<(), String> {
    let n = ids.len();
    let sums: Vec<i64> = (0..n).map(|j| expected.iter().map(|row| row[j]).sum()).collect();
    let (totals, loser) = eliminate_lowest(matrix, acc).map_err(|e| format!("case {case}: {e}"))?;
    for (j, id) in ids.iter().enumerate() {
        let got = totals.of(id).map(i64::from);
        ensure(got == Some(sums[j]), || format!("case {case}: {id} total {got:?} vs {}", sums[j]))?;
    }
    let min = *sums.iter().min().unwrap();
    let mut worst: Vec<usize> = (0..n).filter(|&j| sums[j] == min).collect();
    if worst.len() > 1 {
        *ties += 1;
    }
    worst.sort_by(|&a, &b| {
        acc[&ids[a]]
            .partial_cmp(&acc[&ids[b]])
            .unwrap()
            .then(ids[a].cmp(&ids[b]))
    });
    let want = &ids[worst[0]];
    ensure(&loser == want, || format!("case {case}: removed {loser}, expected {want}"))
}

fn c8_oracle_judge() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("oracle.jsonl");
    let report = dir.path().join("oracle.json");
    let (code, _, stderr) = vidpanel(&[
        "simulate", "--agents", "0.9,0.5,0.5", "--judge", "oracle", "--trials", "10000", "--seed", "8",
        "--policy", "dynamic", "--transcripts", p(&tr), "--out", p(&report),
    ]);
    ensure(code == 0, || format!("simulate exited {code}: {stderr}"))?;
    let sessions = group_sessions(read_jsonl(&tr));
    ensure(sessions.len() == 10_000, || format!("{} sessions in transcript", sessions.len()))?;
    let (mut final_ok, mut plural_credit) = (0usize, 0.0f64);
    let (mut applicable, mut correct_elims) = (0usize, 0usize);
    for (s, events) in &sessions {
        let fin = events.iter().find(|e| kind(e) == "finalize").ok_or_else(|| format!("{s}: no finalize"))?;
        let gold = fin["payload"]["gold"].as_str().ok_or_else(|| format!("{s}: no gold"))?;
        final_ok += usize::from(fin["payload"]["answer"].as_str() == Some(gold));
        let r1 = answers_in_round(events, 1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in r1.values().filter(|a| a.as_str() != "Invalid") {
            *counts.entry(a).or_default() += 1;
        }
        if let Some(&best) = counts.values().max() {
            let top: Vec<&&str> = counts.iter().filter(|(_, &c)| c == best).map(|(k, _)| k).collect();
            if top.iter().any(|k| **k == gold) {
                plural_credit += 1.0 / top.len() as f64;
            }
        }
        for e in events.iter().filter(|e| kind(e) == "eliminate") {
            let answers = answers_in_round(events, round_of(e));
            let wrong = |id: &str| answers.get(id).map(String::as_str) != Some(gold);
            let judged: Vec<&str> = e["payload"]["totals"].as_array().unwrap().iter().map(|t| t[0].as_str().unwrap()).collect();
            if judged.iter().any(|id| wrong(id)) {
                applicable += 1;
                correct_elims += usize::from(wrong(e["payload"]["removed"].as_str().unwrap()));
            }
        }
    }
    let n = sessions.len() as f64;
    let final_acc = final_ok as f64 / n;
    let plural_acc = plural_credit / n;
    ensure(applicable > 0, || "no elimination with a wrong agent present".into())?;
    ensure(correct_elims == applicable, || format!("{correct_elims}/{applicable} eliminations removed a wrong agent"))?;
    ensure(final_acc >= plural_acc, || format!("final {final_acc:.4} < plurality {plural_acc:.4}"))?;
    let r = read_json(&report);
    ensure(
        r["final_accuracy"].as_f64() == Some(final_acc),
        || format!("report final accuracy {} vs recount {final_acc}", r["final_accuracy"]),
    )?;
    Ok(format!(
        "elimination correctness 1.0 over {applicable} eliminations, final {final_acc:.4} >= plurality {plural_acc:.4}"
    ))
}

fn c9_prompt_goldens() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = vidpanel(&["render-prompts", "--out", p(dir.path())]);
    ensure(code == 0, || format!("render-prompts exited {code}: {stderr}\n{stdout}"))?;
    let goldens = Path::new(env!("CARGO_MANIFEST_DIR")).join("goldens");
    let mut names = Vec::new();
    for entry in fs::read_dir(&goldens).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let rendered = fs::read(dir.path().join(&name)).map_err(|e| format!("{name} not rendered: {e}"))?;
        ensure(rendered == fs::read(&path).unwrap(), || format!("{name} differs from golden"))?;
        names.push(name);
    }
    ensure(names.len() >= 6, || format!("only {} goldens", names.len()))?;
    let judge = fs::read_to_string(dir.path().join("judge.txt")).unwrap();
    let history = fs::read_to_string(dir.path().join("history.txt")).unwrap();
    ensure(judge.contains("The score ranges from 1 to 10."), || "judge template lacks the score range".into())?;
    ensure(
        history.contains("this answer was removed from the discussion"),
        || "history template lacks the removal sentence".into(),
    )?;
    ensure(!stdout.contains("MISMATCH"), || "stdout reports a mismatch".into())?;
    Ok(format!("{} templates byte-identical to goldens", names.len()))
}

struct PlantedClip {
    source: String,
    clip_id: String,
    start: f64,
    end: f64,
    caption: String,
}

fn c10_longvr() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let durations = [0.5, 4.0, 4.999, 5.0, 5.001, 60.0, 145.5, 719.999, 720.0, 720.001, 1000.0];
    let lengths = [0usize, 3, 19, 20, 21, 35, 71, 120];
    let words = ["person", "walks", "toward", "the", "red", "door", "while", "holding", "a", "cup"];
    let mut clips = Vec::new();
    for i in 0..100 {
        let source = format!("src{}", i % 4);
        let d = if i % 3 == 0 { rng.gen_range(1.0..900.0) } else { durations[rng.gen_range(0..durations.len())] };
        let start = f64::from(rng.gen_range(0..5000)) * 0.5;
        let n = lengths[rng.gen_range(0..lengths.len())];
        let caption: Vec<&str> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let sep = if i % 5 == 0 { "  " } else { " " };
        clips.push(PlantedClip {
            source,
            clip_id: format!("clip{i:03}"),
            start,
            end: start + d,
            caption: caption.join(sep),
        });
    }
    let dir = tempfile::tempdir().unwrap();
    let listings = dir.path().join("listings");
    fs::create_dir(&listings).unwrap();
    let mut by_source: BTreeMap<&str, String> = BTreeMap::new();
    for c in &clips {
        let line = json!({"clip_id": c.clip_id, "start_s": c.start, "end_s": c.end, "caption": c.caption});
        by_source.entry(&c.source).or_default().push_str(&format!("{line}\n"));
    }
    for (s, text) in &by_source {
        fs::write(listings.join(format!("{s}.jsonl")), text).unwrap();
    }
    let kept = dir.path().join("kept.jsonl");
    let stats = dir.path().join("stats.json");
    let (code, _, stderr) = vidpanel(&["longvr-prep", "--listings", p(&listings), "--out", p(&kept), "--stats", p(&stats)]);
    ensure(code == 0, || format!("longvr-prep exited {code}: {stderr}"))?;

    let want: Vec<&PlantedClip> = clips
        .iter()
        .filter(|c| {
            let d = c.end - c.start;
            (5.0..=720.0).contains(&d) && c.caption.split_whitespace().count() >= 20
        })
        .collect();
    let want_ids: BTreeSet<(String, String)> = want.iter().map(|c| (c.source.clone(), c.clip_id.clone())).collect();
    let got: BTreeSet<(String, String)> = read_jsonl(&kept)
        .iter()
        .map(|r| (r["source"].as_str().unwrap().into(), r["clip_id"].as_str().unwrap().into()))
        .collect();
    ensure(got == want_ids, || {
        format!(
            "kept set differs: extra {:?}, missing {:?}",
            got.difference(&want_ids).collect::<Vec<_>>(),
            want_ids.difference(&got).collect::<Vec<_>>()
        )
    })?;
    let s = read_json(&stats);
    let n = want.len() as f64;
    let mean_d = want.iter().map(|c| c.end - c.start).sum::<f64>() / n;
    let mean_t = want.iter().map(|c| c.caption.split_whitespace().count() as f64).sum::<f64>() / n;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-300);
    ensure(s["total_kept"].as_u64() == Some(want.len() as u64), || format!("total_kept {}", s["total_kept"]))?;
    let got_d = s["mean_duration_s"].as_f64().unwrap_or(f64::NAN);
    let got_t = s["mean_caption_tokens"].as_f64().unwrap_or(f64::NAN);
    ensure(close(got_d, mean_d), || format!("mean duration {got_d} vs {mean_d}"))?;
    ensure(close(got_t, mean_t), || format!("mean tokens {got_t} vs {mean_t}"))?;
    for src in by_source.keys() {
        let expect = want.iter().filter(|c| c.source == *src).count() as u64;
        let got = s["per_source"][*src].as_u64().unwrap_or(0);
        ensure(got == expect, || format!("{src}: {got} kept vs {expect}"))?;
    }
    Ok(format!("{} of 100 clips kept as expected, stats within 1e-9", want.len()))
}

fn c11_round_cap() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let seeds = ["11", "12", "13", "14", "15"];
    let mut means = Vec::new();
    let mut per_seed: Vec<Vec<f64>> = Vec::new();
    for rounds in ["1", "2", "3"] {
        let mut accs = Vec::new();
        for seed in seeds {
            let out = dir.path().join(format!("r{rounds}-s{seed}.json"));
            let (code, _, stderr) = vidpanel(&[
                "simulate", "--agents", "0.7,0.6,0.5", "--judge", "noisy", "--trials", "4000", "--seed", seed,
                "--max-rounds", rounds, "--out", p(&out),
            ]);
            ensure(code == 0, || format!("simulate exited {code}: {stderr}"))?;
            accs.push(read_json(&out)["final_accuracy"].as_f64().unwrap());
        }
        means.push(accs.iter().sum::<f64>() / accs.len() as f64);
        per_seed.push(accs);
    }
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || format!("means not non-decreasing: {means:?}"))?;
    let monotone_seeds = (0..seeds.len())
        .filter(|&s| per_seed[0][s] <= per_seed[1][s] && per_seed[1][s] <= per_seed[2][s])
        .count();
    Ok(format!(
        "mean final accuracy {:.4} <= {:.4} <= {:.4}; monotone in {monotone_seeds}/5 seeds",
        means[0], means[1], means[2]
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("protocol determinism", c1_determinism),
        ("consensus analytics", c2_consensus_analytics),
        ("early stopping", c3_early_stopping),
        ("elimination discipline", c4_elimination_discipline),
        ("chunk-selection oracle", c5_chunk_selection),
        ("selection oracle", c6_selection),
        ("judge math oracle", c7_judge_math),
        ("oracle-judge benefit", c8_oracle_judge),
        ("prompt goldens", c9_prompt_goldens),
        ("longvr filters", c10_longvr),
        ("round-cap ablation shape", c11_round_cap),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!("acceptance criteria");
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("{label}: PASS ({detail}) [{:.1}s]", start.elapsed().as_secs_f64()),
            Ok(Err(why)) => {
                failed += 1;
                println!("{label}: FAIL ({why})");
            }
            Err(_) => {
                failed += 1;
                println!("{label}: FAIL (panicked)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
