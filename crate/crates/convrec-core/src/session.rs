//! Session-level preference learners.
//!
//! Current-session representations gather mentions and pool them
//! (see [`crate::graphenc::pool_mentions`]). Historical sessions are
//! summarized per session and then aggregated:
//!
//! * entity and item views weigh sessions by similarity to a current
//!   query through a shared bilinear form with a temperature,
//! * the word view weighs positions and sessions by temporal softmax
//!   factors over the raw indices `1..=t`,
//! * the intent gate mixes the word and entity vectors through a learned
//!   sigmoid gate.
//!
//! A user in their first session has no historical sessions; all
//! historical representations are exactly zero then.

use crate::tape::{Tape, Var};
use crate::tensor::Array;
use rand::Rng;

/// Per-user, per-instance view vectors on the tape: the current and
/// historical representations of the entity/word/item views plus the
/// gated intent vectors. All are `1 x d`; historical fields are exactly
/// zero for a user in their first session.
#[derive(Clone, Copy, Debug)]
pub struct UserViews {
    pub current_entity: Var,
    pub current_word: Var,
    pub hist_entity: Var,
    pub hist_word: Var,
    pub hist_item: Var,
    pub current_intent: Var,
    pub hist_intent: Var,
}

/// Bilinear session-attention form (shared by entity and item views).
#[derive(Clone, Debug)]
pub struct HistAttnParams {
    pub w_bilinear: Array, // d x d
}

/// Eq.-style temporal word aggregation output map.
#[derive(Clone, Debug)]
pub struct TemporalWordParams {
    pub out_map: Array, // d x d
}

/// Sigmoid gate over the concatenated word and entity vectors.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w: Array, // 1 x 2d
}

pub struct HistAttnVars {
    pub w_bilinear: Var,
}

pub struct TemporalWordVars {
    pub out_map: Var,
}

pub struct GateVars {
    pub w: Var,
}

impl HistAttnParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        HistAttnParams { w_bilinear: Array::uniform(d, d, 1.0 / (d as f64).sqrt(), rng) }
    }

    pub fn inject(&self, tape: &mut Tape) -> HistAttnVars {
        HistAttnVars { w_bilinear: tape.leaf(self.w_bilinear.clone()) }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.w_bilinear"), &self.w_bilinear));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.w_bilinear"), &mut self.w_bilinear));
    }
}

impl TemporalWordParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        TemporalWordParams { out_map: Array::uniform(d, d, 1.0 / (d as f64).sqrt(), rng) }
    }

    pub fn inject(&self, tape: &mut Tape) -> TemporalWordVars {
        TemporalWordVars { out_map: tape.leaf(self.out_map.clone()) }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.out_map"), &self.out_map));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.out_map"), &mut self.out_map));
    }
}

impl GateParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        GateParams { w: Array::uniform(1, 2 * d, 1.0 / ((2 * d) as f64).sqrt(), rng) }
    }

    pub fn inject(&self, tape: &mut Tape) -> GateVars {
        GateVars { w: tape.leaf(self.w.clone()) }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.w"), &self.w));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
    }
}

/// Softmax over the raw positions `1..=t`.
pub fn positional_softmax(t: usize) -> Vec<f64> {
    assert!(t > 0);
    let max = t as f64;
    let exps: Vec<f64> = (1..=t).map(|m| ((m as f64) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Similarity-weighted aggregation of historical session vectors against
/// a query: weights `softmax_j(h_j W q / temperature)`. Returns the
/// aggregate and the `1 x (T-1)` weight row; `None` sessions means no
/// history and yields a zero vector.
pub fn aggregate_historical(
    tape: &mut Tape,
    query: Var,
    sessions: &[Var],
    attn: &HistAttnVars,
    temperature: f64,
    d: usize,
) -> (Var, Option<Var>) {
    assert!(temperature > 0.0, "temperature must be positive");
    if sessions.is_empty() {
        return (tape.leaf(Array::zeros(1, d)), None);
    }
    let stacked = tape.concat_rows(sessions); // (T-1) x d
    let mixed = tape.matmul(stacked, attn.w_bilinear); // (T-1) x d, h W
    let qt = tape.transpose(query); // d x 1
    let scores = tape.matmul(mixed, qt); // (T-1) x 1
    let scaled = tape.scale(scores, 1.0 / temperature);
    let scores_row = tape.transpose(scaled); // 1 x (T-1)
    let weights = tape.softmax_rows(scores_row);
    let out = tape.matmul(weights, stacked); // 1 x d
    (out, Some(weights))
}

/// Temporal word-session representation: positions weighted by
/// `softmax(1..=t)`, then the output map. Returns the representation and
/// the (constant) positional weights. An empty word list yields zero.
pub fn session_word_repr(
    tape: &mut Tape,
    word_rows: Option<Var>,
    vars: &TemporalWordVars,
    d: usize,
) -> (Var, Option<Var>) {
    let rows = match word_rows {
        Some(r) => r,
        None => return (tape.leaf(Array::zeros(1, d)), None),
    };
    let t = tape.value(rows).rows();
    let weights = tape.leaf(Array::row_vec(positional_softmax(t)));
    let pooled = tape.matmul(weights, rows); // 1 x d
    let ft = tape.transpose(vars.out_map);
    let out = tape.matmul(pooled, ft);
    (out, Some(weights))
}

/// Aggregates per-session word representations with temporal softmax
/// weights over the session indices `1..=T-1`; zero when there is no
/// history.
pub fn historical_word_repr(tape: &mut Tape, session_reprs: &[Var], d: usize) -> Var {
    if session_reprs.is_empty() {
        return tape.leaf(Array::zeros(1, d));
    }
    let stacked = tape.concat_rows(session_reprs);
    let weights = tape.leaf(Array::row_vec(positional_softmax(session_reprs.len())));
    tape.matmul(weights, stacked)
}

/// Gate: `tau = sigmoid(w [r_w; r_e])`, output `tau r_w + (1-tau) r_e`.
/// Returns `(mixed, tau)`.
pub fn intent_gate(tape: &mut Tape, r_w: Var, r_e: Var, gate: &GateVars) -> (Var, Var) {
    let cat = tape.concat_cols(&[r_w, r_e]); // 1 x 2d
    let wt = tape.transpose(gate.w); // 2d x 1
    let logit = tape.matmul(cat, wt); // 1 x 1
    let tau = tape.sigmoid(logit);
    let diff = tape.sub(r_w, r_e);
    let scaled = tape.mul_scalar(diff, tau);
    let mixed = tape.add(r_e, scaled);
    (mixed, tau)
}
