//! Recommendation: model assembly, scoring, the joint training objective
//! with mapper pretraining and per-epoch snapshot rebuilds, ranking
//! metrics and checkpointing.

mod config;
mod metrics;
mod model;
mod train;

pub use config::{Ablation, ModelConfig, TrainConfig};
pub use metrics::{
    entity_bucket, evaluate_instances, hr_at, mrr_at, ndcg_at, rank_by_full_sort, rank_of_label,
    InstanceScore, MetricRow, RankingReport, ENTITY_BUCKETS,
};
pub use model::{softmax_scores, BatchLoss, GraphTables, RecModel, RecParams, RecVars, ScoringContext};
pub use train::{evaluate_rec, train_hr_at_1, train_rec, EpochLog, TrainedRec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecError {
    #[error("the corpus has no items to score")]
    EmptyItemSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (phase {phase})")]
    NumericFailure { phase: &'static str, epoch: usize, batch: usize },
    #[error(transparent)]
    Lookalike(#[from] crate::lookalike::LookalikeError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
