//! Chronological train/val/test splitting.
//!
//! For each evaluation user the last `n_test` sessions go to test, the
//! `n_val` before those to validation, and everything earlier to train;
//! non-eval users contribute all sessions to train. Users whose train
//! part comes out empty are kept and flagged cold-start.

use super::Corpus;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Per-user session assignment; values are 1-based session indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    /// Keyed by user id; ordered so serialization is deterministic.
    pub users: BTreeMap<String, SplitEntry>,
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("eval user {user:?} has {have} sessions but the split needs at least {need}")]
    TooFewSessions { user: String, have: usize, need: usize },
    #[error("eval user {user:?} is not in the corpus")]
    UnknownEvalUser { user: String },
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse split file {path}: {message}")]
    Parse { path: String, message: String },
}

impl Split {
    /// Users with at least one val or test session.
    pub fn eval_users(&self) -> Vec<&str> {
        self.users
            .iter()
            .filter(|(_, e)| !e.val.is_empty() || !e.test.is_empty())
            .map(|(u, _)| u.as_str())
            .collect()
    }

    /// An eval user with no train sessions has no in-train history.
    pub fn is_cold_start(&self, user_id: &str) -> bool {
        self.users
            .get(user_id)
            .map(|e| e.train.is_empty() && (!e.val.is_empty() || !e.test.is_empty()))
            .unwrap_or(false)
    }

    pub fn part_of(&self, user_id: &str, session_index: usize) -> Option<Part> {
        let entry = self.users.get(user_id)?;
        if entry.train.contains(&session_index) {
            Some(Part::Train)
        } else if entry.val.contains(&session_index) {
            Some(Part::Val)
        } else if entry.test.contains(&session_index) {
            Some(Part::Test)
        } else {
            None
        }
    }
}

pub fn chronological_split(
    corpus: &Corpus,
    eval_users: &[String],
    n_val: usize,
    n_test: usize,
) -> Result<Split, SplitError> {
    let user_idx = corpus.user_index();
    for u in eval_users {
        if !user_idx.contains_key(u.as_str()) {
            return Err(SplitError::UnknownEvalUser { user: u.clone() });
        }
    }

    let mut users = BTreeMap::new();
    for record in &corpus.users {
        let indices: Vec<usize> = record.sessions.iter().map(|s| s.session_index).collect();
        let entry = if eval_users.iter().any(|u| u == &record.user_id) {
            let have = indices.len();
            let need = n_val + n_test;
            if have < need {
                return Err(SplitError::TooFewSessions { user: record.user_id.clone(), have, need });
            }
            let train_end = have - need;
            let val_end = train_end + n_val;
            SplitEntry {
                train: indices[..train_end].to_vec(),
                val: indices[train_end..val_end].to_vec(),
                test: indices[val_end..].to_vec(),
            }
        } else {
            SplitEntry { train: indices, val: Vec::new(), test: Vec::new() }
        };
        users.insert(record.user_id.clone(), entry);
    }
    Ok(Split { users })
}

/// Samples `n` eval users reproducibly by seed.
pub fn sample_eval_users(corpus: &Corpus, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = corpus.users.iter().map(|u| u.user_id.clone()).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n);
    ids.sort();
    ids
}

pub fn save_split(split: &Split, path: impl AsRef<Path>) -> Result<(), SplitError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&split.users).expect("split serialization cannot fail");
    std::fs::write(path, text).map_err(|source| SplitError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_split(path: impl AsRef<Path>) -> Result<Split, SplitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SplitError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let users: BTreeMap<String, SplitEntry> =
        serde_json::from_str(&text).map_err(|e| SplitError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    Ok(Split { users })
}
