//! Training loop: mapper pretraining epochs on the bare alignment sum,
//! then joint epochs on mean label NLL plus the weighted alignment loss,
//! with the look-alike snapshot store rebuilt at every epoch start.
//! Single-threaded and fully determined by the seed.

use super::config::{ModelConfig, TrainConfig};
use super::metrics::{evaluate_instances, rank_of_label, InstanceScore, RankingReport};
use super::model::{RecModel, ScoringContext};
use super::RecError;
use crate::corpus::{extract_instances, Corpus, Part, RecInstance, Split};
use crate::lookalike::SnapshotStore;
use crate::optim::Adam;
use crate::tape::Tape;
use crate::tensor::Array;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub phase: &'static str,
    pub epoch: usize,
    pub total: f64,
    pub rec_nll: Option<f64>,
    pub alignment: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        match self.rec_nll {
            Some(nll) => format!(
                "{} epoch {} total {:.6} nll {:.6} align {:.6}",
                self.phase, self.epoch, self.total, nll, self.alignment
            ),
            None => format!("{} epoch {} total {:.6} align {:.6}", self.phase, self.epoch, self.total, self.alignment),
        }
    }
}

pub struct TrainedRec {
    pub model: RecModel,
    /// Snapshot store rebuilt from the final parameters.
    pub store: SnapshotStore,
    /// Epoch tag of `store`, for staleness checks downstream.
    pub store_epoch: u64,
    pub log: Vec<EpochLog>,
}

fn run_epoch(
    model: &mut RecModel,
    corpus: &Corpus,
    order: &[usize],
    instances: &[RecInstance],
    batch_size: usize,
    store: Option<(&SnapshotStore, u64)>,
    mapper_only: bool,
    adam: &mut Adam,
    phase: &'static str,
    epoch: usize,
) -> Result<EpochLog, RecError> {
    let mut total_sum = 0.0;
    let mut nll_sum = 0.0;
    let mut align_sum = 0.0;
    let mut seen = 0usize;

    for (batch_no, chunk) in order.chunks(batch_size).enumerate() {
        let batch: Vec<RecInstance> = chunk.iter().map(|&i| instances[i].clone()).collect();
        let mut tape = Tape::new();
        let (loss, vars) = model.batch_loss(&mut tape, corpus, &batch, store, mapper_only)?;
        let total = tape.value(loss.total).get(0, 0);
        if !total.is_finite() {
            return Err(RecError::NumericFailure { phase, epoch, batch: batch_no });
        }
        total_sum += total * batch.len() as f64;
        align_sum += tape.value(loss.alignment).get(0, 0) * batch.len() as f64;
        if let Some(nll) = loss.rec_nll {
            nll_sum += tape.value(nll).get(0, 0) * batch.len() as f64;
        }
        seen += batch.len();

        let grads = tape.backward(loss.total);
        let flat = vars.flat();
        let grad_arrays: Vec<Array> = flat.iter().map(|&v| grads.get(v).clone()).collect();
        let mut entries = Vec::new();
        model.params.visit_mut(&mut entries);
        adam.step(&mut entries, &grad_arrays);
    }

    let n = seen.max(1) as f64;
    Ok(EpochLog {
        phase,
        epoch,
        total: total_sum / n,
        rec_nll: if mapper_only { None } else { Some(nll_sum / n) },
        alignment: align_sum / n,
    })
}

/// The full schedule: mapper pretraining, then joint training with
/// per-epoch snapshot rebuilds, then a final rebuild for evaluation.
pub fn train_rec(
    corpus: &Corpus,
    split: &Split,
    model_config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainedRec, RecError> {
    let mut model = RecModel::new(corpus, model_config, train_config.seed)?;
    let instances = extract_instances(corpus, split, Part::Train, model.config.include_system_mentions);
    let mut log = Vec::new();
    let mut adam = Adam::new(train_config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed.wrapping_add(1));

    if !instances.is_empty() {
        for epoch in 0..train_config.mapper_pretrain_epochs {
            let mut order: Vec<usize> = (0..instances.len()).collect();
            order.shuffle(&mut rng);
            let entry = run_epoch(
                &mut model,
                corpus,
                &order,
                &instances,
                train_config.batch_size,
                None,
                true,
                &mut adam,
                "mapper",
                epoch,
            )?;
            log.push(entry);
        }

        for epoch in 0..train_config.epochs {
            let store = if model.config.ablation.no_lookalike {
                None
            } else {
                Some(model.rebuild_snapshots(corpus, split, epoch as u64))
            };
            let mut order: Vec<usize> = (0..instances.len()).collect();
            order.shuffle(&mut rng);
            let entry = run_epoch(
                &mut model,
                corpus,
                &order,
                &instances,
                train_config.batch_size,
                store.as_ref().map(|s| (s, epoch as u64)),
                false,
                &mut adam,
                "joint",
                epoch,
            )?;
            log.push(entry);
        }
    }

    let store_epoch = train_config.epochs as u64;
    let store = model.rebuild_snapshots(corpus, split, store_epoch);
    Ok(TrainedRec { model, store, store_epoch, log })
}

/// Scores every instance of a part and aggregates the ranking report.
/// Returns `None` when the part has no labeled turns.
pub fn evaluate_rec(
    model: &RecModel,
    corpus: &Corpus,
    split: &Split,
    part: Part,
    store: Option<(&SnapshotStore, u64)>,
) -> Result<Option<RankingReport>, RecError> {
    let instances = extract_instances(corpus, split, part, model.config.include_system_mentions);
    if instances.is_empty() {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let (vars, tables) = model.inject(&mut tape);
    let mut scored = Vec::with_capacity(instances.len());
    for inst in &instances {
        let ctx = ScoringContext::of_instance(inst);
        let views = model.views(&mut tape, &vars, &tables, corpus, &ctx);
        let user = model.user_vector(&mut tape, &vars, &views, store, inst.user_idx)?;
        let probs = model.score_items(&mut tape, &tables, user);
        let rank = rank_of_label(tape.value(probs).as_slice(), inst.label_item);
        scored.push(InstanceScore {
            rank,
            n_context_entities: inst.context_entities.len(),
            cold_start_user: split.is_cold_start(&corpus.users[inst.user_idx].user_id),
        });
    }
    Ok(Some(evaluate_instances(&scored)))
}

/// HR@1 on a part; handy for overfitting checks.
pub fn train_hr_at_1(
    model: &RecModel,
    corpus: &Corpus,
    split: &Split,
    part: Part,
    store: Option<(&SnapshotStore, u64)>,
) -> Result<f64, RecError> {
    let instances = extract_instances(corpus, split, part, model.config.include_system_mentions);
    if instances.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let (vars, tables) = model.inject(&mut tape);
    let mut hits = 0usize;
    for inst in &instances {
        let ctx = ScoringContext::of_instance(inst);
        let views = model.views(&mut tape, &vars, &tables, corpus, &ctx);
        let user = model.user_vector(&mut tape, &vars, &views, store, inst.user_idx)?;
        let probs = model.score_items(&mut tape, &tables, user);
        if rank_of_label(tape.value(probs).as_slice(), inst.label_item) == 1 {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}
