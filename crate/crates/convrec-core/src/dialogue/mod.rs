//! Seq2seq dialogue generation with the user vector injected as a
//! vocabulary bias, plus generation metrics (BLEU, distinct n-grams,
//! perplexity).

mod data;
mod metrics;
mod model;
mod train;

pub use data::{extract_dialogue_instances, DialogueInstance, Vocab};
pub use metrics::{
    bleu_n, distinct_n_corpus, distinct_n_sentence_mean, evaluate_dialogue, DialogueReport,
};
pub use model::{
    AttnParams, DecoderLayerParams, DialogueConfig, DialogueModel, DialogueParams, DialogueVars,
    EncoderLayerParams, FfnParams, GenConfig, LayerNormParams,
};
pub use train::{train_dialogue, user_vectors_for_instances, DialogueTrainConfig, TrainedDialogue};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NumericFailure { epoch: usize, batch: usize },
    #[error("dialogue model dimension {dim} is not divisible by {heads} heads")]
    BadHeadCount { dim: usize, heads: usize },
    #[error("user vector count {got} does not match instance count {want}")]
    UserVectorMismatch { got: usize, want: usize },
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
