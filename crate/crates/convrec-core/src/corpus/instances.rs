//! Recommendation-instance extraction.
//!
//! One instance per labeled turn: the context is everything mentioned
//! strictly before that turn within the same session, and the historical
//! sessions are everything chronologically before that session.

use super::{Corpus, Part, Session, Speaker, Split};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecInstance {
    /// Position in `Corpus::users`.
    pub user_idx: usize,
    /// 1-based session ordinal.
    pub session_index: usize,
    /// Turn offset within the session.
    pub turn_idx: usize,
    /// Entity indices mentioned strictly before the labeled turn.
    pub context_entities: Vec<usize>,
    /// Word indices mentioned strictly before the labeled turn.
    pub context_words: Vec<usize>,
    /// Item position into `Corpus::items`.
    pub label_item: usize,
}

/// Mentions strictly before `turn_idx` in a session, in stream order.
pub fn instance_context(
    session: &Session,
    turn_idx: usize,
    include_system: bool,
) -> (Vec<usize>, Vec<usize>) {
    let mut entities = Vec::new();
    let mut words = Vec::new();
    for turn in session.turns.iter().take(turn_idx) {
        if !include_system && turn.speaker != Speaker::User {
            continue;
        }
        entities.extend_from_slice(&turn.entity_mentions);
        words.extend_from_slice(&turn.word_mentions);
    }
    (entities, words)
}

pub fn extract_instances(
    corpus: &Corpus,
    split: &Split,
    part: Part,
    include_system: bool,
) -> Vec<RecInstance> {
    let mut out = Vec::new();
    for (user_idx, user) in corpus.users.iter().enumerate() {
        let entry = match split.users.get(&user.user_id) {
            Some(e) => e,
            None => continue,
        };
        let wanted = match part {
            Part::Train => &entry.train,
            Part::Val => &entry.val,
            Part::Test => &entry.test,
        };
        for session in &user.sessions {
            if !wanted.contains(&session.session_index) {
                continue;
            }
            for (turn_idx, turn) in session.turns.iter().enumerate() {
                let label_item = match turn.label_item {
                    Some(l) => l,
                    None => continue,
                };
                let (context_entities, context_words) = instance_context(session, turn_idx, include_system);
                out.push(RecInstance {
                    user_idx,
                    session_index: session.session_index,
                    turn_idx,
                    context_entities,
                    context_words,
                    label_item,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chronological_split, Session, Speaker, Turn, UserRecord};

    fn turn(speaker: Speaker, entities: Vec<usize>, words: Vec<usize>, label: Option<usize>) -> Turn {
        Turn { speaker, tokens: vec![], entity_mentions: entities, word_mentions: words, label_item: label }
    }

    fn corpus_one_session(turns: Vec<Turn>) -> Corpus {
        Corpus {
            entities: (0..10).map(|i| format!("e{i}")).collect(),
            relations: vec![],
            triples: vec![],
            items: vec![0, 1],
            words: (0..10).map(|i| format!("w{i}")).collect(),
            word_edges: vec![],
            users: vec![UserRecord {
                user_id: "u0".into(),
                sessions: vec![Session { session_index: 1, turns }],
            }],
        }
    }

    #[test]
    fn labels_at_turns_3_and_5_give_two_instances_with_prefix_context() {
        let corpus = corpus_one_session(vec![
            turn(Speaker::User, vec![2], vec![1], None),
            turn(Speaker::User, vec![3], vec![], None),
            turn(Speaker::System, vec![], vec![], Some(0)),
            turn(Speaker::User, vec![4], vec![2], None),
            turn(Speaker::System, vec![], vec![], Some(1)),
        ]);
        let split = chronological_split(&corpus, &[], 0, 0).unwrap();
        let instances = extract_instances(&corpus, &split, Part::Train, true);
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].turn_idx, 2);
        assert_eq!(instances[0].context_entities, vec![2, 3]);
        assert_eq!(instances[0].context_words, vec![1]);
        assert_eq!(instances[1].context_entities, vec![2, 3, 4]);
    }

    #[test]
    fn unlabeled_session_gives_no_instances() {
        let corpus = corpus_one_session(vec![turn(Speaker::User, vec![1], vec![1], None)]);
        let split = chronological_split(&corpus, &[], 0, 0).unwrap();
        assert!(extract_instances(&corpus, &split, Part::Train, true).is_empty());
    }

    #[test]
    fn instance_count_equals_label_count() {
        let corpus = corpus_one_session(vec![
            turn(Speaker::System, vec![], vec![], Some(0)),
            turn(Speaker::System, vec![0], vec![], Some(1)),
            turn(Speaker::User, vec![1], vec![], None),
            turn(Speaker::System, vec![], vec![], Some(0)),
        ]);
        let split = chronological_split(&corpus, &[], 0, 0).unwrap();
        let labels: usize = corpus.users[0].sessions[0]
            .turns
            .iter()
            .filter(|t| t.label_item.is_some())
            .count();
        assert_eq!(extract_instances(&corpus, &split, Part::Train, true).len(), labels);
    }

    #[test]
    fn system_mentions_can_be_excluded() {
        let corpus = corpus_one_session(vec![
            turn(Speaker::System, vec![5], vec![5], None),
            turn(Speaker::User, vec![6], vec![6], None),
            turn(Speaker::System, vec![], vec![], Some(0)),
        ]);
        let split = chronological_split(&corpus, &[], 0, 0).unwrap();
        let with = extract_instances(&corpus, &split, Part::Train, true);
        assert_eq!(with[0].context_entities, vec![5, 6]);
        let without = extract_instances(&corpus, &split, Part::Train, false);
        assert_eq!(without[0].context_entities, vec![6]);
    }
}
