//! Dialogue vocabulary and context/response pair extraction.
//!
//! Corpus token ids are shifted past five reserved specials. A training
//! pair is built for every system turn: the context is the concatenation
//! of all earlier turns in the session separated by `SEP`, and the
//! response is the system turn's tokens terminated by `EOS`.

use crate::corpus::{Corpus, Part, Speaker, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub n_corpus_tokens: usize,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const SEP: usize = 4;
    pub const OFFSET: usize = 5;

    pub fn for_corpus(corpus: &Corpus) -> Self {
        Vocab { n_corpus_tokens: corpus.token_vocab_size() }
    }

    pub fn size(&self) -> usize {
        self.n_corpus_tokens + Self::OFFSET
    }

    pub fn encode(&self, token: u32) -> usize {
        let t = token as usize;
        if t < self.n_corpus_tokens {
            t + Self::OFFSET
        } else {
            Self::UNK
        }
    }

    /// Corpus token id of a vocab id; specials map to `None`.
    pub fn decode(&self, id: usize) -> Option<u32> {
        if id >= Self::OFFSET && id < self.size() {
            Some((id - Self::OFFSET) as u32)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueInstance {
    pub user_idx: usize,
    pub session_index: usize,
    pub turn_idx: usize,
    /// Vocab ids of the concatenated prior turns, `SEP`-joined; may be
    /// empty for a session-opening system turn.
    pub context: Vec<usize>,
    /// Vocab ids of the system utterance, terminated by `EOS`.
    pub response: Vec<usize>,
}

/// One pair per system turn of the chosen part.
pub fn extract_dialogue_instances(
    corpus: &Corpus,
    split: &Split,
    part: Part,
    vocab: &Vocab,
) -> Vec<DialogueInstance> {
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
                if turn.speaker != Speaker::System || turn.tokens.is_empty() {
                    continue;
                }
                let mut context = Vec::new();
                for (i, prev) in session.turns.iter().take(turn_idx).enumerate() {
                    if i > 0 {
                        context.push(Vocab::SEP);
                    }
                    context.extend(prev.tokens.iter().map(|&t| vocab.encode(t)));
                }
                let mut response: Vec<usize> = turn.tokens.iter().map(|&t| vocab.encode(t)).collect();
                response.push(Vocab::EOS);
                out.push(DialogueInstance {
                    user_idx,
                    session_index: session.session_index,
                    turn_idx,
                    context,
                    response,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chronological_split, synthesize_corpus, GenConfig};

    #[test]
    fn vocab_shifts_past_specials() {
        let vocab = Vocab { n_corpus_tokens: 10 };
        assert_eq!(vocab.size(), 15);
        assert_eq!(vocab.encode(0), 5);
        assert_eq!(vocab.encode(9), 14);
        assert_eq!(vocab.encode(10), Vocab::UNK);
        assert_eq!(vocab.decode(5), Some(0));
        assert_eq!(vocab.decode(Vocab::EOS), None);
    }

    #[test]
    fn pairs_have_sep_joined_contexts_and_eos_responses() {
        let corpus = synthesize_corpus(
            &GenConfig { n_users: 2, sessions_per_user: 2, turns_per_session: 4, ..GenConfig::default() },
            3,
        )
        .unwrap();
        let split = chronological_split(&corpus, &[], 0, 0).unwrap();
        let vocab = Vocab::for_corpus(&corpus);
        let pairs = extract_dialogue_instances(&corpus, &split, Part::Train, &vocab);
        // two system turns per session
        assert_eq!(pairs.len(), 2 * 2 * 2);
        for pair in &pairs {
            assert_eq!(*pair.response.last().unwrap(), Vocab::EOS);
            assert!(pair.response.len() >= 2);
            if pair.turn_idx >= 2 {
                assert!(pair.context.contains(&Vocab::SEP));
            }
        }
        // a turn-1 system reply sees exactly the opening turn, no SEP
        let first = pairs.iter().find(|p| p.turn_idx == 1).unwrap();
        assert!(!first.context.is_empty());
        assert!(!first.context.contains(&Vocab::SEP));
    }
}
