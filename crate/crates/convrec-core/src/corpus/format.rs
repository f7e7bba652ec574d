//! On-disk corpus format.
//!
//! A corpus file is JSON with keys `{entities, relations, triples, items,
//! words, word_edges, users}` and string ids throughout (token ids are
//! integers). Two layouts are accepted:
//!
//! 1. a single JSON document, or
//! 2. line-delimited JSON: the first line holds the graph header
//!    (everything except `users`), each following non-empty line one user
//!    record.
//!
//! [`save_corpus`] always writes the single-document layout with a fixed
//! key order, so saving is deterministic and `save(load(save(c)))`
//! reproduces the bytes of `save(c)`.
//!
//! KG triples and lexical edges can also be ingested from tab-separated
//! files (3 and 2 columns respectively) via [`read_triples_tsv`] /
//! [`read_word_edges_tsv`].

use super::{Corpus, CorpusError, Session, Speaker, Turn, UserRecord};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    entities: Vec<String>,
    relations: Vec<String>,
    triples: Vec<(String, String, String)>,
    items: Vec<String>,
    words: Vec<String>,
    word_edges: Vec<(String, String)>,
    users: Vec<UserFile>,
}

#[derive(Serialize, Deserialize)]
struct HeaderFile {
    entities: Vec<String>,
    relations: Vec<String>,
    triples: Vec<(String, String, String)>,
    items: Vec<String>,
    words: Vec<String>,
    word_edges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct UserFile {
    user_id: String,
    sessions: Vec<SessionFile>,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    turns: Vec<TurnFile>,
}

#[derive(Serialize, Deserialize)]
struct TurnFile {
    speaker: Speaker,
    tokens: Vec<u32>,
    entities: Vec<String>,
    words: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    item: Option<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pathname = path.display().to_string();

    let file = match serde_json::from_str::<CorpusFile>(&text) {
        Ok(f) => f,
        Err(single_err) => parse_line_delimited(&text, &pathname, single_err)?,
    };
    let corpus = resolve(file, &pathname)?;
    corpus.validate()?;
    Ok(corpus)
}

fn parse_line_delimited(
    text: &str,
    pathname: &str,
    single_err: serde_json::Error,
) -> Result<CorpusFile, CorpusError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header_text) = match lines.next() {
        Some(x) => x,
        None => {
            return Err(CorpusError::Parse {
                path: pathname.to_string(),
                line: None,
                message: format!("empty file ({single_err})"),
            })
        }
    };
    let header: HeaderFile = serde_json::from_str(header_text).map_err(|e| CorpusError::Parse {
        path: pathname.to_string(),
        line: Some(header_line + 1),
        message: e.to_string(),
    })?;
    let mut users = Vec::new();
    for (lineno, line) in lines {
        let user: UserFile = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: pathname.to_string(),
            line: Some(lineno + 1),
            message: e.to_string(),
        })?;
        users.push(user);
    }
    Ok(CorpusFile {
        entities: header.entities,
        relations: header.relations,
        triples: header.triples,
        items: header.items,
        words: header.words,
        word_edges: header.word_edges,
        users,
    })
}

fn resolve(file: CorpusFile, pathname: &str) -> Result<Corpus, CorpusError> {
    let entity_idx: HashMap<&str, usize> =
        file.entities.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let word_idx: HashMap<&str, usize> =
        file.words.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let relation_idx: HashMap<&str, usize> =
        file.relations.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut items = Vec::with_capacity(file.items.len());
    for id in &file.items {
        let &e = entity_idx.get(id.as_str()).ok_or_else(|| CorpusError::ItemNotEntity { id: id.clone() })?;
        items.push(e);
    }
    let item_idx: HashMap<usize, usize> = items.iter().enumerate().map(|(pos, &e)| (e, pos)).collect();

    let mut triples = Vec::with_capacity(file.triples.len());
    for (i, (h, r, t)) in file.triples.iter().enumerate() {
        let &hh = entity_idx.get(h.as_str()).ok_or_else(|| CorpusError::TripleRef {
            index: i,
            kind: "entity",
            id: h.clone(),
        })?;
        let &rr = relation_idx.get(r.as_str()).ok_or_else(|| CorpusError::TripleRef {
            index: i,
            kind: "relation",
            id: r.clone(),
        })?;
        let &tt = entity_idx.get(t.as_str()).ok_or_else(|| CorpusError::TripleRef {
            index: i,
            kind: "entity",
            id: t.clone(),
        })?;
        triples.push((hh, rr, tt));
    }

    let mut word_edges = Vec::with_capacity(file.word_edges.len());
    for (i, (a, b)) in file.word_edges.iter().enumerate() {
        let &aa = word_idx.get(a.as_str()).ok_or_else(|| CorpusError::WordEdgeRef { index: i, id: a.clone() })?;
        let &bb = word_idx.get(b.as_str()).ok_or_else(|| CorpusError::WordEdgeRef { index: i, id: b.clone() })?;
        word_edges.push((aa, bb));
    }

    let _ = pathname;
    let mut users = Vec::with_capacity(file.users.len());
    for user in file.users {
        let mut sessions = Vec::with_capacity(user.sessions.len());
        for (spos, session) in user.sessions.into_iter().enumerate() {
            let sidx = spos + 1;
            let mut turns = Vec::with_capacity(session.turns.len());
            for (tpos, turn) in session.turns.into_iter().enumerate() {
                let mut entity_mentions = Vec::with_capacity(turn.entities.len());
                for id in &turn.entities {
                    let &e = entity_idx.get(id.as_str()).ok_or_else(|| CorpusError::UnknownEntity {
                        user: user.user_id.clone(),
                        session: sidx,
                        turn: tpos,
                        id: id.clone(),
                    })?;
                    entity_mentions.push(e);
                }
                let mut word_mentions = Vec::with_capacity(turn.words.len());
                for id in &turn.words {
                    let &w = word_idx.get(id.as_str()).ok_or_else(|| CorpusError::UnknownWord {
                        user: user.user_id.clone(),
                        session: sidx,
                        turn: tpos,
                        id: id.clone(),
                    })?;
                    word_mentions.push(w);
                }
                let label_item = match &turn.item {
                    None => None,
                    Some(id) => {
                        let e = entity_idx.get(id.as_str()).copied();
                        let pos = e.and_then(|e| item_idx.get(&e).copied());
                        Some(pos.ok_or_else(|| CorpusError::UnknownItem {
                            user: user.user_id.clone(),
                            session: sidx,
                            turn: tpos,
                            id: id.clone(),
                        })?)
                    }
                };
                turns.push(Turn {
                    speaker: turn.speaker,
                    tokens: turn.tokens,
                    entity_mentions,
                    word_mentions,
                    label_item,
                });
            }
            sessions.push(Session { session_index: sidx, turns });
        }
        users.push(UserRecord { user_id: user.user_id, sessions });
    }

    Ok(Corpus {
        entities: file.entities,
        relations: file.relations,
        triples,
        items,
        words: file.words,
        word_edges,
        users,
    })
}

fn unresolve(corpus: &Corpus) -> CorpusFile {
    CorpusFile {
        entities: corpus.entities.clone(),
        relations: corpus.relations.clone(),
        triples: corpus
            .triples
            .iter()
            .map(|&(h, r, t)| {
                (corpus.entities[h].clone(), corpus.relations[r].clone(), corpus.entities[t].clone())
            })
            .collect(),
        items: corpus.items.iter().map(|&e| corpus.entities[e].clone()).collect(),
        words: corpus.words.clone(),
        word_edges: corpus
            .word_edges
            .iter()
            .map(|&(a, b)| (corpus.words[a].clone(), corpus.words[b].clone()))
            .collect(),
        users: corpus
            .users
            .iter()
            .map(|u| UserFile {
                user_id: u.user_id.clone(),
                sessions: u
                    .sessions
                    .iter()
                    .map(|s| SessionFile {
                        turns: s
                            .turns
                            .iter()
                            .map(|t| TurnFile {
                                speaker: t.speaker,
                                tokens: t.tokens.clone(),
                                entities: t.entity_mentions.iter().map(|&e| corpus.entities[e].clone()).collect(),
                                words: t.word_mentions.iter().map(|&w| corpus.words[w].clone()).collect(),
                                item: t.label_item.map(|i| corpus.entities[corpus.items[i]].clone()),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn save_corpus_to_string(corpus: &Corpus) -> String {
    serde_json::to_string_pretty(&unresolve(corpus)).expect("corpus serialization cannot fail")
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, save_corpus_to_string(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads 3-column tab-separated triples `head<TAB>relation<TAB>tail`.
pub fn read_triples_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String, String)>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: Some(lineno + 1),
                message: format!("expected 3 tab-separated columns, got {}", cols.len()),
            });
        }
        out.push((cols[0].to_string(), cols[1].to_string(), cols[2].to_string()));
    }
    Ok(out)
}

/// Reads 2-column tab-separated lexical edges `word<TAB>word`.
pub fn read_word_edges_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: Some(lineno + 1),
                message: format!("expected 2 tab-separated columns, got {}", cols.len()),
            });
        }
        out.push((cols[0].to_string(), cols[1].to_string()));
    }
    Ok(out)
}
