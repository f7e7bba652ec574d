//! The recommendation model: graph encoders, session learners, look-alike
//! retrieval and fusion composed into per-instance scoring and the joint
//! batch objective.

use super::config::ModelConfig;
use super::RecError;
use crate::corpus::{
    extract_instances, session_entity_mentions, session_labeled_items, session_word_mentions,
    Corpus, Part, RecInstance, Split,
};
use crate::fusion::{aspect_view, fuse, item_view, FusionParams, FusionVars};
use crate::graphenc::{
    gcn_adjacency, gcn_encode, pool_mentions, relation_adjacency, rgcn_encode, GcnParams, GcnVars,
    PoolParams, PoolVars, RgcnParams, RgcnVars,
};
use crate::lookalike::{
    lookalike_contribution, SnapshotEntry, SnapshotStore, SnapshotVectors, View,
};
use crate::mapper;
use crate::session::{
    aggregate_historical, historical_word_repr, intent_gate, session_word_repr, GateParams,
    GateVars, HistAttnParams, HistAttnVars, TemporalWordParams, TemporalWordVars, UserViews,
};
use crate::tape::{Tape, Var};
use crate::tensor::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RecParams {
    pub rgcn: RgcnParams,
    pub gcn: GcnParams,
    pub pool_entity_cur: PoolParams,
    pub pool_entity_hist: PoolParams,
    pub pool_item: PoolParams,
    pub pool_word_cur: PoolParams,
    pub word_temporal: TemporalWordParams,
    pub hist_attn: HistAttnParams,
    pub intent_gate: GateParams,
    pub fusion: FusionParams,
}

impl RecParams {
    pub fn init(
        n_entities: usize,
        n_relations: usize,
        n_words: usize,
        config: &ModelConfig,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let d = config.dim;
        RecParams {
            rgcn: RgcnParams::init(n_entities, n_relations, d, config.gnn_layers, rng),
            gcn: GcnParams::init(n_words, d, config.gnn_layers, rng),
            pool_entity_cur: PoolParams::init(d, rng),
            pool_entity_hist: PoolParams::init(d, rng),
            pool_item: PoolParams::init(d, rng),
            pool_word_cur: PoolParams::init(d, rng),
            word_temporal: TemporalWordParams::init(d, rng),
            hist_attn: HistAttnParams::init(d, rng),
            intent_gate: GateParams::init(d, rng),
            fusion: FusionParams::init(d, rng),
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array)>) {
        self.rgcn.visit("rgcn", out);
        self.gcn.visit("gcn", out);
        self.pool_entity_cur.visit("pool_entity_cur", out);
        self.pool_entity_hist.visit("pool_entity_hist", out);
        self.pool_item.visit("pool_item", out);
        self.pool_word_cur.visit("pool_word_cur", out);
        self.word_temporal.visit("word_temporal", out);
        self.hist_attn.visit("hist_attn", out);
        self.intent_gate.visit("intent_gate", out);
        self.fusion.visit("fusion", out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array)>) {
        self.rgcn.visit_mut("rgcn", out);
        self.gcn.visit_mut("gcn", out);
        self.pool_entity_cur.visit_mut("pool_entity_cur", out);
        self.pool_entity_hist.visit_mut("pool_entity_hist", out);
        self.pool_item.visit_mut("pool_item", out);
        self.pool_word_cur.visit_mut("pool_word_cur", out);
        self.word_temporal.visit_mut("word_temporal", out);
        self.hist_attn.visit_mut("hist_attn", out);
        self.intent_gate.visit_mut("intent_gate", out);
        self.fusion.visit_mut("fusion", out);
    }
}

pub struct RecVars {
    pub rgcn: RgcnVars,
    pub gcn: GcnVars,
    pub pool_entity_cur: PoolVars,
    pub pool_entity_hist: PoolVars,
    pub pool_item: PoolVars,
    pub pool_word_cur: PoolVars,
    pub word_temporal: TemporalWordVars,
    pub hist_attn: HistAttnVars,
    pub intent_gate: GateVars,
    pub fusion: FusionVars,
}

impl RecVars {
    /// Tape handles in the exact order of [`RecParams::visit`]; the
    /// optimizer pairs them positionally.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.push(self.rgcn.base);
        for layer in &self.rgcn.layers {
            out.extend(layer.w_rel.iter().copied());
            out.push(layer.w_self);
        }
        out.push(self.gcn.base);
        out.extend(self.gcn.layers.iter().copied());
        for pool in [&self.pool_entity_cur, &self.pool_entity_hist, &self.pool_item, &self.pool_word_cur] {
            out.push(pool.score_vec);
            out.push(pool.score_mat);
            out.push(pool.out_map);
        }
        out.push(self.word_temporal.out_map);
        out.push(self.hist_attn.w_bilinear);
        out.push(self.intent_gate.w);
        out.push(self.fusion.gate_entity.w);
        out.push(self.fusion.gate_entity.b);
        out.push(self.fusion.gate_word.w);
        out.push(self.fusion.gate_word.b);
        out.push(self.fusion.fuse_gate.w);
        out
    }
}

/// Encoded per-batch tables on the tape.
pub struct GraphTables {
    /// `|E| x d` relational encoder output.
    pub entity: Var,
    /// `|W| x d` lexical encoder output.
    pub word: Var,
    /// `|I| x d` rows of the item entities.
    pub items: Var,
    /// `d x |I|`, kept for scoring.
    pub items_t: Var,
}

/// A scoring context: the live session prefix of one user.
#[derive(Clone, Debug)]
pub struct ScoringContext<'a> {
    pub user_idx: usize,
    /// Ordinal of the session being served; history is every session of
    /// the user with a strictly smaller ordinal.
    pub session_index: usize,
    pub entities: &'a [usize],
    pub words: &'a [usize],
}

impl<'a> ScoringContext<'a> {
    pub fn of_instance(inst: &'a RecInstance) -> Self {
        ScoringContext {
            user_idx: inst.user_idx,
            session_index: inst.session_index,
            entities: &inst.context_entities,
            words: &inst.context_words,
        }
    }
}

pub struct BatchLoss {
    pub total: Var,
    /// Mean negative log-likelihood of the labels (absent in mapper-only batches).
    pub rec_nll: Option<Var>,
    /// Unweighted sum of the three alignment-task losses.
    pub alignment: Var,
}

pub struct RecModel {
    pub config: ModelConfig,
    pub params: RecParams,
    entity_adjacency: Vec<Array>,
    word_adjacency: Array,
    /// Entity index per item position.
    item_entities: Vec<usize>,
}

impl RecModel {
    pub fn new(corpus: &Corpus, config: ModelConfig, seed: u64) -> Result<Self, RecError> {
        if corpus.items.is_empty() {
            return Err(RecError::EmptyItemSet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = RecParams::init(
            corpus.n_entities(),
            corpus.relations.len().max(1),
            corpus.n_words().max(1),
            &config,
            &mut rng,
        );
        Ok(RecModel {
            config,
            params,
            entity_adjacency: relation_adjacency(
                corpus.n_entities(),
                corpus.relations.len().max(1),
                &corpus.triples,
            ),
            word_adjacency: gcn_adjacency(corpus.n_words().max(1), &corpus.word_edges),
            item_entities: corpus.items.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn n_items(&self) -> usize {
        self.item_entities.len()
    }

    /// Puts the parameters on a tape and runs both graph encoders.
    pub fn inject(&self, tape: &mut Tape) -> (RecVars, GraphTables) {
        let vars = RecVars {
            rgcn: self.params.rgcn.inject(tape),
            gcn: self.params.gcn.inject(tape),
            pool_entity_cur: self.params.pool_entity_cur.inject(tape),
            pool_entity_hist: self.params.pool_entity_hist.inject(tape),
            pool_item: self.params.pool_item.inject(tape),
            pool_word_cur: self.params.pool_word_cur.inject(tape),
            word_temporal: self.params.word_temporal.inject(tape),
            hist_attn: self.params.hist_attn.inject(tape),
            intent_gate: self.params.intent_gate.inject(tape),
            fusion: self.params.fusion.inject(tape),
        };
        let entity = rgcn_encode(tape, &self.entity_adjacency, &vars.rgcn);
        let word = gcn_encode(tape, &self.word_adjacency, &vars.gcn);
        let items = tape.gather_rows(entity, &self.item_entities);
        let items_t = tape.transpose(items);
        let tables = GraphTables { entity, word, items, items_t };
        (vars, tables)
    }

    /// Builds the multi-view state of one scoring context.
    pub fn views(
        &self,
        tape: &mut Tape,
        vars: &RecVars,
        tables: &GraphTables,
        corpus: &Corpus,
        ctx: &ScoringContext,
    ) -> UserViews {
        let d = self.config.dim;
        let ab = self.config.ablation;
        let include_system = self.config.include_system_mentions;
        let zero = |tape: &mut Tape| tape.leaf(Array::zeros(1, d));

        let current_entity = if ab.no_entity {
            zero(tape)
        } else {
            pool_mentions(tape, tables.entity, ctx.entities, &vars.pool_entity_cur, d).0
        };
        let current_word = if ab.no_word {
            zero(tape)
        } else {
            pool_mentions(tape, tables.word, ctx.words, &vars.pool_word_cur, d).0
        };
        let (current_intent, _) = intent_gate(tape, current_word, current_entity, &vars.intent_gate);

        let user = &corpus.users[ctx.user_idx];
        let history: Vec<_> = if ab.no_historical {
            Vec::new()
        } else {
            user.sessions.iter().filter(|s| s.session_index < ctx.session_index).collect()
        };

        let hist_entity = if history.is_empty() || ab.no_entity {
            zero(tape)
        } else {
            let per_session: Vec<Var> = history
                .iter()
                .filter_map(|s| {
                    let mentions = session_entity_mentions(s, include_system);
                    if mentions.is_empty() {
                        None
                    } else {
                        Some(pool_mentions(tape, tables.entity, &mentions, &vars.pool_entity_hist, d).0)
                    }
                })
                .collect();
            aggregate_historical(tape, current_entity, &per_session, &vars.hist_attn, self.config.entity_temp, d).0
        };

        let hist_word = if history.is_empty() || ab.no_word {
            zero(tape)
        } else {
            // every session participates; empty sessions contribute zero rows
            let per_session: Vec<Var> = history
                .iter()
                .map(|s| {
                    let mentions = session_word_mentions(s, include_system);
                    let rows = if mentions.is_empty() {
                        None
                    } else {
                        Some(tape.gather_rows(tables.word, &mentions))
                    };
                    session_word_repr(tape, rows, &vars.word_temporal, d).0
                })
                .collect();
            historical_word_repr(tape, &per_session, d)
        };

        let (hist_intent, _) = intent_gate(tape, hist_word, hist_entity, &vars.intent_gate);

        let hist_item = if history.is_empty() || ab.no_item {
            zero(tape)
        } else {
            let per_session: Vec<Var> = history
                .iter()
                .filter_map(|s| {
                    let labels = session_labeled_items(s);
                    if labels.is_empty() {
                        None
                    } else {
                        let entities: Vec<usize> = labels.iter().map(|&i| self.item_entities[i]).collect();
                        Some(pool_mentions(tape, tables.entity, &entities, &vars.pool_item, d).0)
                    }
                })
                .collect();
            aggregate_historical(tape, current_intent, &per_session, &vars.hist_attn, self.config.item_temp, d).0
        };

        UserViews {
            current_entity,
            current_word,
            hist_entity,
            hist_word,
            hist_item,
            current_intent,
            hist_intent,
        }
    }

    /// The detached look-alike sums for one context: queries are the live
    /// values of the historical view vectors, but nothing about this
    /// computation enters the tape.
    pub fn lookalike_sums(
        &self,
        tape: &Tape,
        views: &UserViews,
        store: Option<(&SnapshotStore, u64)>,
        exclude_user: usize,
    ) -> Result<(Array, Array), RecError> {
        let d = self.config.dim;
        match store {
            Some((store, epoch)) if !self.config.ablation.no_lookalike => {
                let query_word = tape.value(views.hist_word);
                let query_entity = tape.value(views.hist_entity);
                let word = lookalike_contribution(
                    query_word,
                    store,
                    epoch,
                    self.config.word_threshold,
                    View::Word,
                    exclude_user,
                )?;
                let entity = lookalike_contribution(
                    query_entity,
                    store,
                    epoch,
                    self.config.entity_threshold,
                    View::Entity,
                    exclude_user,
                )?;
                Ok((word, entity))
            }
            _ => Ok((Array::zeros(1, d), Array::zeros(1, d))),
        }
    }

    /// Fuses the views with explicitly supplied look-alike sums (inserted
    /// as constants).
    pub fn user_vector_with_sums(
        &self,
        tape: &mut Tape,
        vars: &RecVars,
        views: &UserViews,
        la_word: &Array,
        la_entity: &Array,
    ) -> Var {
        let d = self.config.dim;
        let la_word = tape.leaf(la_word.clone());
        let la_entity = tape.leaf(la_entity.clone());
        let (entity_vec, _) = aspect_view(
            tape,
            views.current_entity,
            views.hist_entity,
            la_entity,
            &vars.fusion.gate_entity,
            self.config.entity_divisor,
            self.config.entity_aspect_scale,
        );
        let (word_vec, _) = aspect_view(
            tape,
            views.current_word,
            views.hist_word,
            la_word,
            &vars.fusion.gate_word,
            self.config.word_divisor,
            self.config.word_aspect_scale,
        );
        let (item_vec, _) = item_view(
            tape,
            views.hist_item,
            views.hist_intent,
            views.current_intent,
            self.config.entity_threshold,
            d,
        );
        fuse(tape, word_vec, entity_vec, item_vec, &vars.fusion.fuse_gate)
    }

    /// Fuses the views (plus the detached look-alike sums) into the final
    /// user vector.
    pub fn user_vector(
        &self,
        tape: &mut Tape,
        vars: &RecVars,
        views: &UserViews,
        store: Option<(&SnapshotStore, u64)>,
        exclude_user: usize,
    ) -> Result<Var, RecError> {
        let (la_word, la_entity) = self.lookalike_sums(tape, views, store, exclude_user)?;
        Ok(self.user_vector_with_sums(tape, vars, views, &la_word, &la_entity))
    }

    /// Item logits of one user vector: `user . item_table^T`.
    pub fn item_logits(&self, tape: &mut Tape, tables: &GraphTables, user: Var) -> Var {
        tape.matmul(user, tables.items_t)
    }

    /// Softmax recommendation distribution over the catalog.
    pub fn score_items(&self, tape: &mut Tape, tables: &GraphTables, user: Var) -> Var {
        let logits = self.item_logits(tape, tables, user);
        tape.softmax_rows(logits)
    }

    /// The joint batch objective. With `mapper_only` the loss is the bare
    /// sum of the three alignment tasks (mapper pretraining); otherwise
    /// mean label NLL plus the weighted alignment sum.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        batch: &[RecInstance],
        store: Option<(&SnapshotStore, u64)>,
        mapper_only: bool,
    ) -> Result<(BatchLoss, RecVars), RecError> {
        assert!(!batch.is_empty(), "batch_loss needs at least one instance");
        let (vars, tables) = self.inject(tape);

        let mut mapper_views: Vec<UserViews> = Vec::new();
        let mut seen_users: Vec<usize> = Vec::new();
        let mut logit_rows: Vec<Var> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();

        for inst in batch {
            let ctx = ScoringContext::of_instance(inst);
            let views = self.views(tape, &vars, &tables, corpus, &ctx);
            if !seen_users.contains(&inst.user_idx) {
                seen_users.push(inst.user_idx);
                mapper_views.push(views);
            }
            if !mapper_only {
                let user = self.user_vector(tape, &vars, &views, store, inst.user_idx)?;
                logit_rows.push(self.item_logits(tape, &tables, user));
                labels.push(inst.label_item);
            }
        }

        let alignment = mapper::total_alignment_loss(tape, &mapper_views, self.config.alignment_weight);

        if mapper_only {
            return Ok((BatchLoss { total: alignment, rec_nll: None, alignment }, vars));
        }

        let all_logits = tape.concat_rows(&logit_rows);
        let logp = tape.log_softmax_rows(all_logits);
        let picked = tape.select_cols(logp, &labels);
        let nll_sum = tape.sum_all(picked);
        let rec_nll = tape.scale(nll_sum, -1.0 / batch.len() as f64);
        let weighted = tape.scale(alignment, self.config.alignment_loss_weight);
        let total = tape.add(rec_nll, weighted);
        Ok((BatchLoss { total, rec_nll: Some(rec_nll), alignment }, vars))
    }

    /// Value-only recommendation probabilities for one context.
    pub fn score_context(
        &self,
        corpus: &Corpus,
        ctx: &ScoringContext,
        store: Option<(&SnapshotStore, u64)>,
    ) -> Result<Vec<f64>, RecError> {
        let mut tape = Tape::new();
        let (vars, tables) = self.inject(&mut tape);
        let views = self.views(&mut tape, &vars, &tables, corpus, ctx);
        let user = self.user_vector(&mut tape, &vars, &views, store, ctx.user_idx)?;
        let probs = self.score_items(&mut tape, &tables, user);
        Ok(tape.value(probs).as_slice().to_vec())
    }

    /// Freezes the four per-turn vectors of every labeled training turn.
    pub fn rebuild_snapshots(&self, corpus: &Corpus, split: &Split, epoch: u64) -> SnapshotStore {
        let instances = extract_instances(corpus, split, Part::Train, self.config.include_system_mentions);
        let mut tape = Tape::new();
        let (vars, tables) = self.inject(&mut tape);
        let mut entries = Vec::with_capacity(instances.len());
        for inst in &instances {
            let ctx = ScoringContext::of_instance(inst);
            let views = self.views(&mut tape, &vars, &tables, corpus, &ctx);
            entries.push(SnapshotEntry {
                user_idx: inst.user_idx,
                session_index: inst.session_index,
                turn_idx: inst.turn_idx,
                vectors: SnapshotVectors {
                    hist_word: tape.value(views.hist_word).clone(),
                    cur_word: tape.value(views.current_word).clone(),
                    hist_entity: tape.value(views.hist_entity).clone(),
                    cur_entity: tape.value(views.current_entity).clone(),
                },
            });
        }
        SnapshotStore::new(epoch, entries)
    }
}

/// Standalone pooled scoring used by tests: probabilities from explicit
/// user and item rows.
pub fn softmax_scores(user: &Array, item_rows: &Array) -> Vec<f64> {
    let logits = user.matmul(&item_rows.transpose());
    let mut tape = Tape::new();
    let l = tape.leaf(logits);
    let p = tape.softmax_rows(l);
    tape.value(p).as_slice().to_vec()
}
