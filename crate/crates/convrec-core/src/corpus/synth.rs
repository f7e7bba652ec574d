//! Synthetic corpus generation with controllable history dependence.
//!
//! Items, attribute entities and words are partitioned into topic
//! clusters. Each user gets a latent preferred cluster; each session gets
//! an independent topic cluster. User turns mention entities/words of the
//! session topic, and every system turn recommends an item drawn from the
//! user's preferred cluster with probability `history_weight` and from
//! the session topic otherwise. The recommended item is also mentioned as
//! an entity in the system turn, so mention streams carry the
//! recommendation history.
//!
//! The first user turn of every session mentions words only, which makes
//! the first recommendation of a session a zero-current-entity instance.

use super::{Corpus, CorpusError, Session, Speaker, Turn, UserRecord};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_users: usize,
    pub sessions_per_user: usize,
    /// Turns per session; user and system turns alternate, user first.
    pub turns_per_session: usize,
    pub n_entities: usize,
    pub n_items: usize,
    pub n_words: usize,
    pub n_clusters: usize,
    /// Probability that a label comes from the user's latent cluster
    /// rather than the session topic.
    pub history_weight: f64,
    /// Fraction of users generated with `short_user_sessions` sessions,
    /// for cold-start evaluation setups.
    pub short_user_fraction: f64,
    pub short_user_sessions: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 20,
            sessions_per_user: 5,
            turns_per_session: 6,
            n_entities: 60,
            n_items: 30,
            n_words: 40,
            n_clusters: 4,
            history_weight: 0.7,
            short_user_fraction: 0.0,
            short_user_sessions: 1,
        }
    }
}

impl GenConfig {
    pub fn item_cluster(&self, item: usize) -> usize {
        item % self.n_clusters
    }

    /// Cluster of an attribute entity (entity indices >= `n_items`).
    pub fn attr_cluster(&self, entity: usize) -> usize {
        debug_assert!(entity >= self.n_items);
        (entity - self.n_items) % self.n_clusters
    }

    pub fn word_cluster(&self, word: usize) -> usize {
        word % self.n_clusters
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| Err(CorpusError::BadGenConfig(msg));
        if self.n_items > self.n_entities {
            return fail(format!("n_items ({}) exceeds n_entities ({})", self.n_items, self.n_entities));
        }
        if self.n_clusters == 0 {
            return fail("n_clusters must be positive".into());
        }
        if self.n_items < self.n_clusters {
            return fail("need at least one item per cluster".into());
        }
        if self.n_entities - self.n_items < self.n_clusters {
            return fail("need at least one attribute entity per cluster".into());
        }
        if self.n_words < self.n_clusters {
            return fail("need at least one word per cluster".into());
        }
        if self.n_users == 0 || self.sessions_per_user == 0 {
            return fail("need at least one user and one session".into());
        }
        if self.turns_per_session < 2 {
            return fail("turns_per_session must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.history_weight) {
            return fail(format!("history_weight {} outside [0, 1]", self.history_weight));
        }
        if !(0.0..=1.0).contains(&self.short_user_fraction) {
            return fail("short_user_fraction outside [0, 1]".into());
        }
        if self.short_user_fraction > 0.0 && self.short_user_sessions == 0 {
            return fail("short_user_sessions must be positive".into());
        }
        Ok(())
    }
}

pub fn synthesize_corpus(config: &GenConfig, seed: u64) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_attrs = config.n_entities - config.n_items;
    let mut entities: Vec<String> = (0..config.n_items).map(|i| format!("item_{i}")).collect();
    entities.extend((0..n_attrs).map(|i| format!("attr_{i}")));
    let items: Vec<usize> = (0..config.n_items).collect();
    let words: Vec<String> = (0..config.n_words).map(|i| format!("w_{i}")).collect();
    let relations = vec!["has_attribute".to_string(), "related_to".to_string()];

    // per-cluster member lists
    let cluster_items: Vec<Vec<usize>> = (0..config.n_clusters)
        .map(|c| (0..config.n_items).filter(|&i| config.item_cluster(i) == c).collect())
        .collect();
    let cluster_attrs: Vec<Vec<usize>> = (0..config.n_clusters)
        .map(|c| {
            (config.n_items..config.n_entities)
                .filter(|&e| config.attr_cluster(e) == c)
                .collect()
        })
        .collect();
    let cluster_words: Vec<Vec<usize>> = (0..config.n_clusters)
        .map(|c| (0..config.n_words).filter(|&w| config.word_cluster(w) == c).collect())
        .collect();

    // KG: each item links to two attributes of its cluster (one if the
    // cluster has a single attribute), and items chain within a cluster.
    let mut triple_set = BTreeSet::new();
    for item in 0..config.n_items {
        let attrs = &cluster_attrs[config.item_cluster(item)];
        let first = attrs[rng.gen_range(0..attrs.len())];
        triple_set.insert((item, 0usize, first));
        if attrs.len() > 1 {
            let mut second = attrs[rng.gen_range(0..attrs.len())];
            while second == first {
                second = attrs[rng.gen_range(0..attrs.len())];
            }
            triple_set.insert((item, 0, second));
        }
    }
    for members in &cluster_items {
        for pair in members.windows(2) {
            triple_set.insert((pair[0], 1, pair[1]));
        }
    }
    let triples: Vec<(usize, usize, usize)> = triple_set.into_iter().collect();

    // lexical graph: ring within each cluster
    let mut edge_set = BTreeSet::new();
    for members in &cluster_words {
        if members.len() < 2 {
            continue;
        }
        for pair in members.windows(2) {
            edge_set.insert((pair[0], pair[1]));
        }
        if members.len() > 2 {
            edge_set.insert((members[0], *members.last().unwrap()));
        }
    }
    let word_edges: Vec<(usize, usize)> = edge_set.into_iter().collect();

    let tok_speaker_user = 0u32;
    let tok_speaker_system = 1u32;
    let tok_cluster = |c: usize| 2 + c as u32;
    let tok_entity = |e: usize| (2 + config.n_clusters + e) as u32;
    let tok_word = |w: usize| (2 + config.n_clusters + config.n_entities + w) as u32;

    let mut users = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let preferred = rng.gen_range(0..config.n_clusters);
        let is_short = rng.gen::<f64>() < config.short_user_fraction;
        let n_sessions = if is_short { config.short_user_sessions } else { config.sessions_per_user };

        let mut sessions = Vec::with_capacity(n_sessions);
        for s in 0..n_sessions {
            let topic = rng.gen_range(0..config.n_clusters);
            let mut turns = Vec::with_capacity(config.turns_per_session);
            for pos in 0..config.turns_per_session {
                if pos % 2 == 0 {
                    // user turn: session-topic words, plus entities after the opener
                    let mut word_mentions = vec![pick(&cluster_words[topic], &mut rng)];
                    if rng.gen::<bool>() {
                        word_mentions.push(pick(&cluster_words[topic], &mut rng));
                    }
                    let mut entity_mentions = Vec::new();
                    if pos > 0 {
                        entity_mentions.push(pick(&cluster_attrs[topic], &mut rng));
                        if rng.gen::<bool>() {
                            entity_mentions.push(pick(&cluster_attrs[topic], &mut rng));
                        }
                    }
                    let mut tokens = vec![tok_speaker_user, tok_cluster(topic)];
                    tokens.extend(entity_mentions.iter().map(|&e| tok_entity(e)));
                    tokens.extend(word_mentions.iter().map(|&w| tok_word(w)));
                    turns.push(Turn {
                        speaker: Speaker::User,
                        tokens,
                        entity_mentions,
                        word_mentions,
                        label_item: None,
                    });
                } else {
                    // system turn: always a recommendation
                    let label_cluster =
                        if rng.gen::<f64>() < config.history_weight { preferred } else { topic };
                    let item = pick(&cluster_items[label_cluster], &mut rng);
                    let word = pick(&cluster_words[label_cluster], &mut rng);
                    let tokens = vec![
                        tok_speaker_system,
                        tok_cluster(label_cluster),
                        tok_entity(item),
                        tok_word(word),
                    ];
                    turns.push(Turn {
                        speaker: Speaker::System,
                        tokens,
                        entity_mentions: vec![item],
                        word_mentions: vec![word],
                        label_item: Some(item),
                    });
                }
            }
            sessions.push(Session { session_index: s + 1, turns });
        }
        users.push(UserRecord { user_id: format!("u_{u}"), sessions });
    }

    let corpus = Corpus {
        entities,
        relations,
        triples,
        items,
        words,
        word_edges,
        users,
    };
    debug_assert!(corpus.validate().is_ok());
    Ok(corpus)
}

fn pick(members: &[usize], rng: &mut impl Rng) -> usize {
    members[rng.gen_range(0..members.len())]
}
