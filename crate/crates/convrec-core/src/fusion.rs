//! Multi-aspect fusion of current, historical and look-alike signals.
//!
//! Entity and word views combine three aspects:
//!
//! ```text
//! r_view = current + coeff * historical + aspect_scale * lookalike_sum
//! coeff  = sigmoid(linear([current; historical])) / divisor
//! ```
//!
//! The item view has no current or look-alike aspect; it is the
//! historical item vector scaled by the clipped similarity between the
//! historical and current intent vectors. The final user vector gates the
//! word and entity views together (with its own gate parameters) and adds
//! the item view.

use crate::session::{intent_gate, GateParams, GateVars};
use crate::tape::{Tape, Var};
use crate::tensor::Array;
use rand::Rng;

pub const ZERO_NORM_EPS: f64 = 1e-8;

/// Single-layer `2d -> 1` map with bias, squashed by a sigmoid.
#[derive(Clone, Debug)]
pub struct ScalarGateParams {
    pub w: Array, // 1 x 2d
    pub b: Array, // 1 x 1
}

pub struct ScalarGateVars {
    pub w: Var,
    pub b: Var,
}

impl ScalarGateParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        ScalarGateParams {
            w: Array::uniform(1, 2 * d, 1.0 / ((2 * d) as f64).sqrt(), rng),
            b: Array::zeros(1, 1),
        }
    }

    pub fn inject(&self, tape: &mut Tape) -> ScalarGateVars {
        ScalarGateVars { w: tape.leaf(self.w.clone()), b: tape.leaf(self.b.clone()) }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub gate_entity: ScalarGateParams,
    pub gate_word: ScalarGateParams,
    /// The word/entity combination gate of the final fusion; independent
    /// parameters from the intent gate.
    pub fuse_gate: GateParams,
}

pub struct FusionVars {
    pub gate_entity: ScalarGateVars,
    pub gate_word: ScalarGateVars,
    pub fuse_gate: GateVars,
}

impl FusionParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            gate_entity: ScalarGateParams::init(d, rng),
            gate_word: ScalarGateParams::init(d, rng),
            fuse_gate: GateParams::init(d, rng),
        }
    }

    pub fn inject(&self, tape: &mut Tape) -> FusionVars {
        FusionVars {
            gate_entity: self.gate_entity.inject(tape),
            gate_word: self.gate_word.inject(tape),
            fuse_gate: self.fuse_gate.inject(tape),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        self.gate_entity.visit(&format!("{prefix}.gate_entity"), out);
        self.gate_word.visit(&format!("{prefix}.gate_word"), out);
        self.fuse_gate.visit(&format!("{prefix}.fuse_gate"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        self.gate_entity.visit_mut(&format!("{prefix}.gate_entity"), out);
        self.gate_word.visit_mut(&format!("{prefix}.gate_word"), out);
        self.fuse_gate.visit_mut(&format!("{prefix}.fuse_gate"), out);
    }
}

/// Combines one view's aspects. `lookalike_sum` is expected to be a
/// detached constant leaf. Returns `(view_vector, historical_coeff)`.
pub fn aspect_view(
    tape: &mut Tape,
    current: Var,
    historical: Var,
    lookalike_sum: Var,
    gate: &ScalarGateVars,
    divisor: f64,
    aspect_scale: f64,
) -> (Var, Var) {
    assert!(divisor > 0.0);
    let cat = tape.concat_cols(&[current, historical]);
    let wt = tape.transpose(gate.w);
    let logit_raw = tape.matmul(cat, wt);
    let logit = tape.add(logit_raw, gate.b);
    let sig = tape.sigmoid(logit);
    let coeff = tape.scale(sig, 1.0 / divisor); // (1,1)
    let hist_term = tape.mul_scalar(historical, coeff);
    let look_term = tape.scale(lookalike_sum, aspect_scale);
    let partial = tape.add(current, hist_term);
    let out = tape.add(partial, look_term);
    (out, coeff)
}

/// Item view: `clip(cos(hist_intent, current_intent) - threshold)` times
/// the historical item vector. Returns `(item_vector, coeff)`; a
/// zero-norm intent on either side forces both to zero.
pub fn item_view(
    tape: &mut Tape,
    hist_item: Var,
    hist_intent: Var,
    current_intent: Var,
    threshold: f64,
    d: usize,
) -> (Var, Var) {
    let hist_ok = tape.value(hist_intent).norm() >= ZERO_NORM_EPS;
    let cur_ok = tape.value(current_intent).norm() >= ZERO_NORM_EPS;
    if !hist_ok || !cur_ok {
        let zero = tape.leaf(Array::zeros(1, d));
        let coeff = tape.scalar(0.0);
        return (zero, coeff);
    }
    let sim = tape.cosine(hist_intent, current_intent);
    let shifted = tape.add_const(sim, -threshold);
    let coeff = tape.relu(shifted);
    let out = tape.mul_scalar(hist_item, coeff);
    (out, coeff)
}

/// Final user vector: gate(word_view, entity_view) + item_view.
pub fn fuse(tape: &mut Tape, word_view: Var, entity_view: Var, item_view: Var, gate: &GateVars) -> Var {
    let (mixed, _) = intent_gate(tape, word_view, entity_view, gate);
    tape.add(mixed, item_view)
}
