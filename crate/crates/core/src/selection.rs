//! Team selection by pseudo-label voting over an unlabeled subset.
//!
//! Every library agent answers every subset task. The plurality answer of a task is
//! its pseudo label, and an agent's pseudo-accuracy is the fraction of subset tasks
//! on which it agrees with that label. The top `k` agents form the team.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Answer, OptionLetter};
use crate::seed::SeedMixer;

pub const DEFAULT_SUBSET_SIZE: usize = 150;
pub const DEFAULT_TEAM_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("cannot sample from an empty dataset")]
    EmptyDataset,
    #[error("subset size must be at least 1")]
    ZeroSize,
    #[error("every answer for task `{0}` is invalid")]
    AllInvalid(String),
    #[error("answer table row `{task_id}` has {found} answers for {expected} agents")]
    RaggedRow {
        task_id: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSubset {
    pub task_ids: Vec<String>,
    pub seed: u64,
    pub size: usize,
    /// Set when the requested size exceeded the dataset and the whole dataset was returned.
    pub truncated: bool,
}

/// Uniform sample without replacement, kept in dataset order.
pub fn sample_subset(
    dataset: &[String],
    size: usize,
    seed: u64,
) -> Result<SelectionSubset, SelectionError> {
    if dataset.is_empty() {
        return Err(SelectionError::EmptyDataset);
    }
    if size == 0 {
        return Err(SelectionError::ZeroSize);
    }
    let truncated = size > dataset.len();
    let task_ids = if size >= dataset.len() {
        dataset.to_vec()
    } else {
        let mut rng = SeedMixer::new(seed).with_str("selection-subset").rng();
        let mut picked = index::sample(&mut rng, dataset.len(), size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| dataset[i].clone()).collect()
    };
    Ok(SelectionSubset {
        size: task_ids.len(),
        task_ids,
        seed,
        truncated,
    })
}

/// Plurality answer ignoring invalid votes; ties go to the smallest letter and set the flag.
pub fn pseudo_label(answers: &[Answer]) -> Option<(OptionLetter, bool)> {
    let mut counts = [0usize; 4];
    for a in answers {
        if let Answer::Letter(l) = a {
            counts[l.index()] += 1;
        }
    }
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    let tied = counts.iter().filter(|&&c| c == best).count() > 1;
    let first = counts.iter().position(|&c| c == best)?;
    OptionLetter::from_index(first).map(|l| (l, tied))
}

/// Answers of every library agent on every subset task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerTable {
    pub agent_ids: Vec<String>,
    /// `(task_id, answers)` with answers aligned to `agent_ids`.
    pub rows: Vec<(String, Vec<Answer>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub task_id: String,
    pub label: OptionLetter,
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub accuracies: BTreeMap<String, f64>,
    pub labels: Vec<PseudoLabel>,
    pub team: Vec<String>,
    pub subset_size: usize,
}

impl SelectionReport {
    pub fn accuracy(&self, agent_id: &str) -> Option<f64> {
        self.accuracies.get(agent_id).copied()
    }
}

/// Ranks agents by pseudo-label accuracy over `table` and keeps the top `team_size`.
///
/// The denominator is the subset size, whether or not an agent's answer was valid.
/// Accuracy ties are broken by agent id ascending.
pub fn rank_agents(table: &AnswerTable, team_size: usize) -> Result<SelectionReport, SelectionError> {
    let n_agents = table.agent_ids.len();
    let mut matches = alloc::vec![0usize; n_agents];
    let mut labels = Vec::with_capacity(table.rows.len());
    for (task_id, answers) in &table.rows {
        if answers.len() != n_agents {
            return Err(SelectionError::RaggedRow {
                task_id: task_id.clone(),
                expected: n_agents,
                found: answers.len(),
            });
        }
        let (label, tie) =
            pseudo_label(answers).ok_or_else(|| SelectionError::AllInvalid(task_id.clone()))?;
        for (m, a) in matches.iter_mut().zip(answers) {
            if *a == Answer::Letter(label) {
                *m += 1;
            }
        }
        labels.push(PseudoLabel {
            task_id: task_id.clone(),
            label,
            tie,
        });
    }
    let total = table.rows.len();
    let accuracies: BTreeMap<String, f64> = table
        .agent_ids
        .iter()
        .zip(&matches)
        .map(|(id, &m)| {
            let acc = if total == 0 { 0.0 } else { m as f64 / total as f64 };
            (id.clone(), acc)
        })
        .collect();
    let mut ranked: Vec<(&String, usize)> = table.agent_ids.iter().zip(matches.iter().copied()).collect();
    // Integer match counts share one denominator, so sorting them avoids float ties.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let team = ranked
        .into_iter()
        .take(team_size)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(SelectionReport {
        accuracies,
        labels,
        team,
        subset_size: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use OptionLetter::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i:04}")).collect()
    }

    #[test]
    fn whole_dataset_when_size_matches() {
        let d = ids(150);
        let s = sample_subset(&d, 150, 1).unwrap();
        assert_eq!(s.task_ids, d);
        assert!(!s.truncated);
    }

    #[test]
    fn sampling_is_deterministic_and_distinct() {
        let d = ids(1000);
        let a = sample_subset(&d, 150, 7).unwrap();
        let b = sample_subset(&d, 150, 7).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.task_ids.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 150);
        assert_ne!(a, sample_subset(&d, 150, 8).unwrap());
    }

    #[test]
    fn oversized_request_returns_everything_flagged() {
        let s = sample_subset(&ids(10), 150, 0).unwrap();
        assert_eq!(s.size, 10);
        assert!(s.truncated);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert_eq!(sample_subset(&[], 5, 0), Err(SelectionError::EmptyDataset));
    }

    #[test]
    fn plurality_and_ties() {
        let l = Answer::Letter;
        assert_eq!(pseudo_label(&[l(A), l(A), l(B)]), Some((A, false)));
        assert_eq!(pseudo_label(&[l(A), l(B), Answer::Invalid]), Some((A, true)));
        assert_eq!(pseudo_label(&[Answer::Invalid, Answer::Invalid]), None);
        assert_eq!(pseudo_label(&[l(D), l(C)]), Some((C, true)));
    }

    #[test]
    fn accuracy_is_matches_over_subset() {
        let l = Answer::Letter;
        let table = AnswerTable {
            agent_ids: vec!["x".into(), "y".into(), "z".into()],
            rows: vec![
                ("t1".into(), vec![l(A), l(A), l(B)]),
                ("t2".into(), vec![l(B), l(B), l(B)]),
                ("t3".into(), vec![l(C), l(C), l(D)]),
                ("t4".into(), vec![l(D), l(A), l(A)]),
            ],
        };
        let r = rank_agents(&table, 3).unwrap();
        assert_eq!(r.accuracy("x"), Some(0.75));
        assert_eq!(r.accuracy("y"), Some(1.0));
        assert_eq!(r.accuracy("z"), Some(0.5));
        assert_eq!(r.team, vec!["y", "x", "z"]);
    }

    #[test]
    fn accuracy_ties_break_by_id() {
        let l = Answer::Letter;
        // b matches all five tasks; a and c tie on four.
        let table = AnswerTable {
            agent_ids: vec!["c".into(), "a".into(), "b".into()],
            rows: vec![
                ("1".into(), vec![l(A), l(A), l(A)]),
                ("2".into(), vec![l(A), l(A), l(A)]),
                ("3".into(), vec![l(A), l(A), l(A)]),
                ("4".into(), vec![l(B), l(C), l(B)]),
                ("5".into(), vec![l(C), l(D), l(D)]),
            ],
        };
        let r = rank_agents(&table, 2).unwrap();
        assert_eq!(r.accuracy("a"), Some(0.8));
        assert_eq!(r.accuracy("c"), Some(0.8));
        assert_eq!(r.team, vec!["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn all_invalid_row_propagates() {
        let table = AnswerTable {
            agent_ids: vec!["x".into()],
            rows: vec![("bad".into(), vec![Answer::Invalid])],
        };
        assert_eq!(
            rank_agents(&table, 1),
            Err(SelectionError::AllInvalid("bad".into()))
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn answer() -> impl Strategy<Value = Answer> {
            prop_oneof![
                (0usize..4).prop_map(|i| Answer::Letter(OptionLetter::ALL[i])),
                Just(Answer::Invalid),
            ]
        }

        proptest! {
            #[test]
            fn agent_order_does_not_matter(
                rows in proptest::collection::vec(proptest::collection::vec(answer(), 4), 1..20),
                rot in 0usize..4,
            ) {
                let rows: Vec<Vec<Answer>> = rows
                    .into_iter()
                    .map(|mut r| { if r.iter().all(|a| !a.is_valid()) { r[0] = Answer::Letter(A); } r })
                    .collect();
                let agents: Vec<String> = (0..4).map(|i| format!("ag{i}")).collect();
                let table = AnswerTable {
                    agent_ids: agents.clone(),
                    rows: rows.iter().enumerate().map(|(i, r)| (format!("t{i}"), r.clone())).collect(),
                };
                let mut rotated_ids = agents.clone();
                rotated_ids.rotate_left(rot);
                let rotated = AnswerTable {
                    agent_ids: rotated_ids,
                    rows: rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| {
                            let mut r = r.clone();
                            r.rotate_left(rot);
                            (format!("t{i}"), r)
                        })
                        .collect(),
                };
                let a = rank_agents(&table, 3).unwrap();
                let b = rank_agents(&rotated, 3).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn duplicating_a_unanimous_committee_changes_nothing(
                labels in proptest::collection::vec(0usize..4, 1..30),
            ) {
                let rows: Vec<(String, Vec<Answer>)> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (format!("t{i}"), vec![Answer::Letter(OptionLetter::ALL[l]); 3]))
                    .collect();
                let base = AnswerTable { agent_ids: vec!["a".into(), "b".into(), "c".into()], rows: rows.clone() };
                let mut extended = base.clone();
                extended.agent_ids.push("d".into());
                for (row, &l) in extended.rows.iter_mut().zip(&labels) {
                    row.1.push(Answer::Letter(OptionLetter::ALL[l]));
                }
                let a = rank_agents(&base, 3).unwrap();
                let b = rank_agents(&extended, 3).unwrap();
                prop_assert_eq!(&a.labels, &b.labels);
                for id in ["a", "b", "c"] {
                    prop_assert_eq!(a.accuracy(id), b.accuracy(id));
                }
            }
        }
    }
}
