//! Temporal look-alike user retrieval.
//!
//! Once per epoch the training loop freezes, for every training user and
//! every labeled turn, the four vectors (historical word, current word,
//! historical entity, current entity) into a [`SnapshotStore`]. During
//! the epoch a user's look-alike contribution for a view is
//!
//! ```text
//! sum over other users' turns of  max(0, cos(query, hist) - threshold) * cur
//! ```
//!
//! where `query` is the user's own historical vector for that view.
//! Snapshots are detached constants: similarities are computed on plain
//! values and no gradient flows through the store. The contribution only
//! changes when the store is rebuilt.

use crate::corpus::Corpus;
use crate::tensor::{cosine, Array};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const ZERO_NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Word,
    Entity,
}

#[derive(Clone, Debug)]
pub struct SnapshotVectors {
    pub hist_word: Array,
    pub cur_word: Array,
    pub hist_entity: Array,
    pub cur_entity: Array,
}

#[derive(Clone, Debug)]
pub struct SnapshotEntry {
    pub user_idx: usize,
    pub session_index: usize,
    pub turn_idx: usize,
    pub vectors: SnapshotVectors,
}

#[derive(Clone, Debug)]
pub struct SnapshotStore {
    pub epoch: u64,
    pub entries: Vec<SnapshotEntry>,
}

#[derive(Debug, Error)]
pub enum LookalikeError {
    #[error("snapshot store is stale: built for epoch {store_epoch}, expected {expected_epoch}")]
    StaleEpoch { store_epoch: u64, expected_epoch: u64 },
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse snapshot file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("snapshot file references unknown user {user:?}")]
    UnknownUser { user: String },
}

impl SnapshotStore {
    pub fn new(epoch: u64, entries: Vec<SnapshotEntry>) -> Self {
        SnapshotStore { epoch, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Clip-thresholded, similarity-weighted sum of stored current vectors.
///
/// Entries of `exclude_user` are skipped, as are entries whose stored
/// historical vector has no direction; a zero-norm query contributes
/// nothing (cold start).
pub fn lookalike_contribution(
    query: &Array,
    store: &SnapshotStore,
    expected_epoch: u64,
    threshold: f64,
    view: View,
    exclude_user: usize,
) -> Result<Array, LookalikeError> {
    if store.epoch != expected_epoch {
        return Err(LookalikeError::StaleEpoch {
            store_epoch: store.epoch,
            expected_epoch,
        });
    }
    let d = query.cols();
    let mut out = Array::zeros(1, d);
    if query.norm() < ZERO_NORM_EPS {
        return Ok(out);
    }
    for entry in &store.entries {
        if entry.user_idx == exclude_user {
            continue;
        }
        let (hist, cur) = match view {
            View::Word => (&entry.vectors.hist_word, &entry.vectors.cur_word),
            View::Entity => (&entry.vectors.hist_entity, &entry.vectors.cur_entity),
        };
        if hist.norm() < ZERO_NORM_EPS {
            continue;
        }
        let weight = (cosine(query, hist, ZERO_NORM_EPS) - threshold).max(0.0);
        if weight > 0.0 {
            for c in 0..d {
                out.add_at(0, c, weight * cur.get(0, c));
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    epoch: u64,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    user: String,
    session: usize,
    turn: usize,
    hist_word: Vec<f32>,
    cur_word: Vec<f32>,
    hist_entity: Vec<f32>,
    cur_entity: Vec<f32>,
}

pub fn dump_store(store: &SnapshotStore, corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), LookalikeError> {
    let path = path.as_ref();
    let file = StoreFile {
        epoch: store.epoch,
        entries: store
            .entries
            .iter()
            .map(|e| EntryFile {
                user: corpus.users[e.user_idx].user_id.clone(),
                session: e.session_index,
                turn: e.turn_idx,
                hist_word: e.vectors.hist_word.to_f32(),
                cur_word: e.vectors.cur_word.to_f32(),
                hist_entity: e.vectors.hist_entity.to_f32(),
                cur_entity: e.vectors.cur_entity.to_f32(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).expect("snapshot serialization cannot fail");
    std::fs::write(path, text).map_err(|source| LookalikeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn restore_store(path: impl AsRef<Path>, corpus: &Corpus) -> Result<SnapshotStore, LookalikeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LookalikeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: StoreFile = serde_json::from_str(&text).map_err(|e| LookalikeError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let user_idx = corpus.user_index();
    let mut entries = Vec::with_capacity(file.entries.len());
    for e in file.entries {
        let &uidx = user_idx
            .get(e.user.as_str())
            .ok_or(LookalikeError::UnknownUser { user: e.user.clone() })?;
        let row = |v: &[f32]| Array::from_f32(1, v.len(), v);
        entries.push(SnapshotEntry {
            user_idx: uidx,
            session_index: e.session,
            turn_idx: e.turn,
            vectors: SnapshotVectors {
                hist_word: row(&e.hist_word),
                cur_word: row(&e.cur_word),
                hist_entity: row(&e.hist_entity),
                cur_entity: row(&e.cur_entity),
            },
        });
    }
    Ok(SnapshotStore { epoch: file.epoch, entries })
}
