//! Multi-session dialogue corpus: data model, validation, file formats,
//! chronological splitting, instance extraction and synthetic generation.
//!
//! All id spaces (entities, words, relations, items, users) are dense
//! `usize` indices internally; the on-disk formats use string ids and the
//! loader resolves them (see [`format`]). Items are a subset of entities:
//! `Corpus::items[i]` is the entity index of item `i`, and recommendation
//! labels are item positions.

mod format;
mod instances;
mod split;
mod synth;

pub use format::{load_corpus, read_triples_tsv, read_word_edges_tsv, save_corpus, save_corpus_to_string};
pub use instances::{extract_instances, instance_context, RecInstance};
pub use split::{chronological_split, load_split, sample_eval_users, save_split, Part, Split, SplitEntry};
pub use synth::{synthesize_corpus, GenConfig};

use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<u32>,
    /// Entity indices mentioned in this turn, in order of occurrence.
    pub entity_mentions: Vec<usize>,
    /// Word indices mentioned in this turn, in order of occurrence.
    pub word_mentions: Vec<usize>,
    /// Item position (into `Corpus::items`) iff this is a recommendation turn.
    pub label_item: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    /// 1-based chronological ordinal within the user.
    pub session_index: usize,
    pub turns: Vec<Turn>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    /// Chronologically ordered sessions.
    pub sessions: Vec<Session>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    /// Factual triples `(head entity, relation, tail entity)`.
    pub triples: Vec<(usize, usize, usize)>,
    /// Entity indices of the item catalog; label ids index into this.
    pub items: Vec<usize>,
    pub words: Vec<String>,
    /// Undirected semantic-similarity edges over words.
    pub word_edges: Vec<(usize, usize)>,
    pub users: Vec<UserRecord>,
}

/// Validation failure, locating the offending record where possible.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        message: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("triple {index} references unknown {kind} {id:?}")]
    TripleRef { index: usize, kind: &'static str, id: String },
    #[error("duplicate triple at index {index}")]
    DuplicateTriple { index: usize },
    #[error("word edge {index} references unknown word {id:?}")]
    WordEdgeRef { index: usize, id: String },
    #[error("word edge {index} is a self-loop on {id:?}")]
    WordEdgeSelfLoop { index: usize, id: String },
    #[error("item list entry {id:?} is not a known entity")]
    ItemNotEntity { id: String },
    #[error("user {user:?} session {session} turn {turn} mentions unknown entity {id:?}")]
    UnknownEntity { user: String, session: usize, turn: usize, id: String },
    #[error("user {user:?} session {session} turn {turn} mentions unknown word {id:?}")]
    UnknownWord { user: String, session: usize, turn: usize, id: String },
    #[error("user {user:?} session {session} turn {turn} labels unknown item {id:?}")]
    UnknownItem { user: String, session: usize, turn: usize, id: String },
    #[error("user {user:?} session {session} has no turns")]
    EmptySession { user: String, session: usize },
    #[error("user {user:?} has no sessions")]
    NoSessions { user: String },
    #[error("invalid generator config: {0}")]
    BadGenConfig(String),
}

impl Corpus {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn entity_index(&self) -> HashMap<&str, usize> {
        self.entities.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn word_index(&self) -> HashMap<&str, usize> {
        self.words.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.users.iter().enumerate().map(|(i, u)| (u.user_id.as_str(), i)).collect()
    }

    /// Maps an entity index to its item position, for entities that are items.
    pub fn item_of_entity(&self) -> HashMap<usize, usize> {
        self.items.iter().enumerate().map(|(pos, &e)| (e, pos)).collect()
    }

    /// Largest token id in any turn plus one; 0 for a corpus without tokens.
    pub fn token_vocab_size(&self) -> usize {
        let mut max_id: Option<u32> = None;
        for user in &self.users {
            for session in &user.sessions {
                for turn in &session.turns {
                    for &t in &turn.tokens {
                        max_id = Some(max_id.map_or(t, |m| m.max(t)));
                    }
                }
            }
        }
        max_id.map_or(0, |m| m as usize + 1)
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), CorpusError> {
        check_unique("entity", &self.entities)?;
        check_unique("word", &self.words)?;
        check_unique("relation", &self.relations)?;

        let mut seen_triples = BTreeSet::new();
        for (i, &(h, r, t)) in self.triples.iter().enumerate() {
            if h >= self.entities.len() {
                return Err(CorpusError::TripleRef { index: i, kind: "entity", id: format!("#{h}") });
            }
            if t >= self.entities.len() {
                return Err(CorpusError::TripleRef { index: i, kind: "entity", id: format!("#{t}") });
            }
            if r >= self.relations.len() {
                return Err(CorpusError::TripleRef { index: i, kind: "relation", id: format!("#{r}") });
            }
            if !seen_triples.insert((h, r, t)) {
                return Err(CorpusError::DuplicateTriple { index: i });
            }
        }

        for (i, &(a, b)) in self.word_edges.iter().enumerate() {
            if a >= self.words.len() {
                return Err(CorpusError::WordEdgeRef { index: i, id: format!("#{a}") });
            }
            if b >= self.words.len() {
                return Err(CorpusError::WordEdgeRef { index: i, id: format!("#{b}") });
            }
            if a == b {
                return Err(CorpusError::WordEdgeSelfLoop { index: i, id: self.words[a].clone() });
            }
        }

        for &e in &self.items {
            if e >= self.entities.len() {
                return Err(CorpusError::ItemNotEntity { id: format!("#{e}") });
            }
        }

        let mut seen_users = BTreeSet::new();
        for user in &self.users {
            if !seen_users.insert(user.user_id.as_str()) {
                return Err(CorpusError::DuplicateId { kind: "user", id: user.user_id.clone() });
            }
            if user.sessions.is_empty() {
                return Err(CorpusError::NoSessions { user: user.user_id.clone() });
            }
            for (spos, session) in user.sessions.iter().enumerate() {
                let sidx = spos + 1;
                if session.turns.is_empty() {
                    return Err(CorpusError::EmptySession { user: user.user_id.clone(), session: sidx });
                }
                for (tpos, turn) in session.turns.iter().enumerate() {
                    for &e in &turn.entity_mentions {
                        if e >= self.entities.len() {
                            return Err(CorpusError::UnknownEntity {
                                user: user.user_id.clone(),
                                session: sidx,
                                turn: tpos,
                                id: format!("#{e}"),
                            });
                        }
                    }
                    for &w in &turn.word_mentions {
                        if w >= self.words.len() {
                            return Err(CorpusError::UnknownWord {
                                user: user.user_id.clone(),
                                session: sidx,
                                turn: tpos,
                                id: format!("#{w}"),
                            });
                        }
                    }
                    if let Some(item) = turn.label_item {
                        if item >= self.items.len() {
                            return Err(CorpusError::UnknownItem {
                                user: user.user_id.clone(),
                                session: sidx,
                                turn: tpos,
                                id: format!("#{item}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_unique(kind: &'static str, ids: &[String]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CorpusError::DuplicateId { kind, id: id.clone() });
        }
    }
    Ok(())
}

/// Entity mentions of a whole session, in stream order.
pub fn session_entity_mentions(session: &Session, include_system: bool) -> Vec<usize> {
    session
        .turns
        .iter()
        .filter(|t| include_system || t.speaker == Speaker::User)
        .flat_map(|t| t.entity_mentions.iter().copied())
        .collect()
}

/// Word mentions of a whole session, in stream order.
pub fn session_word_mentions(session: &Session, include_system: bool) -> Vec<usize> {
    session
        .turns
        .iter()
        .filter(|t| include_system || t.speaker == Speaker::User)
        .flat_map(|t| t.word_mentions.iter().copied())
        .collect()
}

/// Item positions recommended in a session, in turn order.
pub fn session_labeled_items(session: &Session) -> Vec<usize> {
    session.turns.iter().filter_map(|t| t.label_item).collect()
}
