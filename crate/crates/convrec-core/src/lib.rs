//! Multi-aspect user modeling for conversational recommendation.
//!
//! The crate covers the full pipeline: multi-session dialogue corpora
//! (loading, validation, chronological splits, synthetic generation),
//! relational/plain graph convolution encoders with attentive pooling,
//! current- and historical-session preference learners, a self-supervised
//! multi-view preference mapper, temporal look-alike user retrieval over
//! per-epoch snapshots, multi-aspect fusion into a single user vector,
//! softmax item recommendation with ranking metrics, and a transformer
//! seq2seq dialogue generator biased by the user vector.
//!
//! Everything differentiable runs on the reverse-mode tape in [`tape`],
//! which is verified against central finite differences in the test
//! suites.

pub mod checkpoint;
pub mod corpus;
pub mod dialogue;
pub mod fusion;
pub mod graphenc;
pub mod lookalike;
pub mod mapper;
pub mod optim;
pub mod rec;
pub mod session;
pub mod tape;
pub mod tensor;

pub use tensor::Array;
pub use tape::{Gradients, Tape, Var};
