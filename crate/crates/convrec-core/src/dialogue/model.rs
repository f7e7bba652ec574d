//! Transformer encoder-decoder with a user-vector vocabulary bias.
//!
//! Post-norm layers, sinusoidal positions, per-sequence processing (a
//! padding mask is supported on the encoder side for padded inputs). The
//! output distribution is `softmax(W_G q + M r_u)` where `M r_u` is a
//! per-sequence constant bias over the vocabulary; the user vector itself
//! is frozen during dialogue training.

use super::data::{DialogueInstance, Vocab};
use super::DialogueError;
use crate::tape::{Tape, Var};
use crate::tensor::Array;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_dim: usize,
    /// Dimension of the incoming user vector.
    pub user_dim: usize,
    /// Longest accepted context; longer inputs are truncated from the left.
    pub max_context_len: usize,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        DialogueConfig {
            vocab_size: 0,
            dim: 300,
            n_heads: 6,
            enc_layers: 2,
            dec_layers: 2,
            ff_dim: 1200,
            user_dim: 128,
            max_context_len: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_len: usize,
    /// `None` decodes greedily; `Some(k)` runs beam search of width `k`.
    pub beam: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_len: 30, beam: None }
    }
}

#[derive(Clone, Debug)]
pub struct AttnParams {
    pub wq: Array,
    pub wk: Array,
    pub wv: Array,
    pub wo: Array,
}

#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: Array, // ff x d
    pub b1: Array, // 1 x ff
    pub w2: Array, // d x ff
    pub b2: Array, // 1 x d
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: Array, // 1 x d
    pub beta: Array,  // 1 x d
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attn: AttnParams,
    pub ln1: LayerNormParams,
    pub ffn: FfnParams,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct DecoderLayerParams {
    pub self_attn: AttnParams,
    pub ln1: LayerNormParams,
    pub cross_attn: AttnParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
    pub ln3: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct DialogueParams {
    pub token_emb: Array, // |V| x d
    pub enc: Vec<EncoderLayerParams>,
    pub dec: Vec<DecoderLayerParams>,
    pub out_proj: Array, // |V| x d
    pub bias_map: Array, // |V| x user_dim
}

pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

pub struct EncoderLayerVars {
    pub attn: AttnVars,
    pub ln1: LayerNormVars,
    pub ffn: FfnVars,
    pub ln2: LayerNormVars,
}

pub struct DecoderLayerVars {
    pub self_attn: AttnVars,
    pub ln1: LayerNormVars,
    pub cross_attn: AttnVars,
    pub ln2: LayerNormVars,
    pub ffn: FfnVars,
    pub ln3: LayerNormVars,
}

pub struct DialogueVars {
    pub token_emb: Var,
    pub enc: Vec<EncoderLayerVars>,
    pub dec: Vec<DecoderLayerVars>,
    pub out_proj: Var,
    pub bias_map: Var,
}

fn fan_in(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    Array::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng)
}

impl AttnParams {
    fn init(d: usize, rng: &mut impl Rng) -> Self {
        AttnParams {
            wq: fan_in(d, d, rng),
            wk: fan_in(d, d, rng),
            wv: fan_in(d, d, rng),
            wo: fan_in(d, d, rng),
        }
    }

    fn inject(&self, tape: &mut Tape) -> AttnVars {
        AttnVars {
            wq: tape.leaf(self.wq.clone()),
            wk: tape.leaf(self.wk.clone()),
            wv: tape.leaf(self.wv.clone()),
            wo: tape.leaf(self.wo.clone()),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.wo"), &self.wo));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.wo"), &mut self.wo));
    }
}

impl FfnParams {
    fn init(d: usize, ff: usize, rng: &mut impl Rng) -> Self {
        FfnParams {
            w1: fan_in(ff, d, rng),
            b1: Array::zeros(1, ff),
            w2: fan_in(d, ff, rng),
            b2: Array::zeros(1, d),
        }
    }

    fn inject(&self, tape: &mut Tape) -> FfnVars {
        FfnVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.w1"), &self.w1));
        out.push((format!("{prefix}.b1"), &self.b1));
        out.push((format!("{prefix}.w2"), &self.w2));
        out.push((format!("{prefix}.b2"), &self.b2));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.w1"), &mut self.w1));
        out.push((format!("{prefix}.b1"), &mut self.b1));
        out.push((format!("{prefix}.w2"), &mut self.w2));
        out.push((format!("{prefix}.b2"), &mut self.b2));
    }
}

impl LayerNormParams {
    fn init(d: usize) -> Self {
        LayerNormParams { gamma: Array::from_fn(1, d, |_, _| 1.0), beta: Array::zeros(1, d) }
    }

    fn inject(&self, tape: &mut Tape) -> LayerNormVars {
        LayerNormVars { gamma: tape.leaf(self.gamma.clone()), beta: tape.leaf(self.beta.clone()) }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

impl DialogueParams {
    fn init(config: &DialogueConfig, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        DialogueParams {
            token_emb: Array::uniform(config.vocab_size, d, 1.0 / (d as f64).sqrt(), rng),
            enc: (0..config.enc_layers)
                .map(|_| EncoderLayerParams {
                    attn: AttnParams::init(d, rng),
                    ln1: LayerNormParams::init(d),
                    ffn: FfnParams::init(d, config.ff_dim, rng),
                    ln2: LayerNormParams::init(d),
                })
                .collect(),
            dec: (0..config.dec_layers)
                .map(|_| DecoderLayerParams {
                    self_attn: AttnParams::init(d, rng),
                    ln1: LayerNormParams::init(d),
                    cross_attn: AttnParams::init(d, rng),
                    ln2: LayerNormParams::init(d),
                    ffn: FfnParams::init(d, config.ff_dim, rng),
                    ln3: LayerNormParams::init(d),
                })
                .collect(),
            out_proj: fan_in(config.vocab_size, d, rng),
            bias_map: fan_in(config.vocab_size, config.user_dim, rng),
        }
    }

    pub fn visit<'a>(&'a self, out: &mut Vec<(String, &'a Array)>) {
        out.push(("token_emb".to_string(), &self.token_emb));
        for (i, layer) in self.enc.iter().enumerate() {
            layer.attn.visit(&format!("enc{i}.attn"), out);
            layer.ln1.visit(&format!("enc{i}.ln1"), out);
            layer.ffn.visit(&format!("enc{i}.ffn"), out);
            layer.ln2.visit(&format!("enc{i}.ln2"), out);
        }
        for (i, layer) in self.dec.iter().enumerate() {
            layer.self_attn.visit(&format!("dec{i}.self_attn"), out);
            layer.ln1.visit(&format!("dec{i}.ln1"), out);
            layer.cross_attn.visit(&format!("dec{i}.cross_attn"), out);
            layer.ln2.visit(&format!("dec{i}.ln2"), out);
            layer.ffn.visit(&format!("dec{i}.ffn"), out);
            layer.ln3.visit(&format!("dec{i}.ln3"), out);
        }
        out.push(("out_proj".to_string(), &self.out_proj));
        out.push(("bias_map".to_string(), &self.bias_map));
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array)>) {
        out.push(("token_emb".to_string(), &mut self.token_emb));
        for (i, layer) in self.enc.iter_mut().enumerate() {
            layer.attn.visit_mut(&format!("enc{i}.attn"), out);
            layer.ln1.visit_mut(&format!("enc{i}.ln1"), out);
            layer.ffn.visit_mut(&format!("enc{i}.ffn"), out);
            layer.ln2.visit_mut(&format!("enc{i}.ln2"), out);
        }
        for (i, layer) in self.dec.iter_mut().enumerate() {
            layer.self_attn.visit_mut(&format!("dec{i}.self_attn"), out);
            layer.ln1.visit_mut(&format!("dec{i}.ln1"), out);
            layer.cross_attn.visit_mut(&format!("dec{i}.cross_attn"), out);
            layer.ln2.visit_mut(&format!("dec{i}.ln2"), out);
            layer.ffn.visit_mut(&format!("dec{i}.ffn"), out);
            layer.ln3.visit_mut(&format!("dec{i}.ln3"), out);
        }
        out.push(("out_proj".to_string(), &mut self.out_proj));
        out.push(("bias_map".to_string(), &mut self.bias_map));
    }
}

impl DialogueVars {
    /// Handles in [`DialogueParams::visit`] order.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.token_emb];
        for layer in &self.enc {
            out.extend([layer.attn.wq, layer.attn.wk, layer.attn.wv, layer.attn.wo]);
            out.extend([layer.ln1.gamma, layer.ln1.beta]);
            out.extend([layer.ffn.w1, layer.ffn.b1, layer.ffn.w2, layer.ffn.b2]);
            out.extend([layer.ln2.gamma, layer.ln2.beta]);
        }
        for layer in &self.dec {
            out.extend([layer.self_attn.wq, layer.self_attn.wk, layer.self_attn.wv, layer.self_attn.wo]);
            out.extend([layer.ln1.gamma, layer.ln1.beta]);
            out.extend([layer.cross_attn.wq, layer.cross_attn.wk, layer.cross_attn.wv, layer.cross_attn.wo]);
            out.extend([layer.ln2.gamma, layer.ln2.beta]);
            out.extend([layer.ffn.w1, layer.ffn.b1, layer.ffn.w2, layer.ffn.b2]);
            out.extend([layer.ln3.gamma, layer.ln3.beta]);
        }
        out.push(self.out_proj);
        out.push(self.bias_map);
        out
    }
}

/// Sinusoidal positional table, `t x d`.
pub fn positional_encoding(t: usize, d: usize) -> Array {
    Array::from_fn(t, d, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000_f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub struct DialogueModel {
    pub config: DialogueConfig,
    pub params: DialogueParams,
}

impl DialogueModel {
    pub fn new(config: DialogueConfig, seed: u64) -> Result<Self, DialogueError> {
        if config.dim % config.n_heads != 0 {
            return Err(DialogueError::BadHeadCount { dim: config.dim, heads: config.n_heads });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DialogueParams::init(&config, &mut rng);
        Ok(DialogueModel { config, params })
    }

    pub fn inject(&self, tape: &mut Tape) -> DialogueVars {
        DialogueVars {
            token_emb: tape.leaf(self.params.token_emb.clone()),
            enc: self
                .params
                .enc
                .iter()
                .map(|l| EncoderLayerVars {
                    attn: l.attn.inject(tape),
                    ln1: l.ln1.inject(tape),
                    ffn: l.ffn.inject(tape),
                    ln2: l.ln2.inject(tape),
                })
                .collect(),
            dec: self
                .params
                .dec
                .iter()
                .map(|l| DecoderLayerVars {
                    self_attn: l.self_attn.inject(tape),
                    ln1: l.ln1.inject(tape),
                    cross_attn: l.cross_attn.inject(tape),
                    ln2: l.ln2.inject(tape),
                    ffn: l.ffn.inject(tape),
                    ln3: l.ln3.inject(tape),
                })
                .collect(),
            out_proj: tape.leaf(self.params.out_proj.clone()),
            bias_map: tape.leaf(self.params.bias_map.clone()),
        }
    }

    fn heads(&self) -> usize {
        self.config.n_heads
    }

    fn attention(
        &self,
        tape: &mut Tape,
        queries: Var,
        memory: Var,
        vars: &AttnVars,
        mask: Option<&Array>,
    ) -> Var {
        let d = self.config.dim;
        let dh = d / self.heads();
        let wq_t = tape.transpose(vars.wq);
        let wk_t = tape.transpose(vars.wk);
        let wv_t = tape.transpose(vars.wv);
        let q = tape.matmul(queries, wq_t);
        let k = tape.matmul(memory, wk_t);
        let v = tape.matmul(memory, wv_t);
        let mask_leaf = mask.map(|m| tape.leaf(m.clone()));

        let mut head_outputs = Vec::with_capacity(self.heads());
        for h in 0..self.heads() {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kh_t = tape.transpose(kh);
            let raw = tape.matmul(qh, kh_t);
            let scaled = tape.scale(raw, 1.0 / (dh as f64).sqrt());
            let masked = match mask_leaf {
                Some(m) => tape.add(scaled, m),
                None => scaled,
            };
            let weights = tape.softmax_rows(masked);
            head_outputs.push(tape.matmul(weights, vh));
        }
        let merged = tape.concat_cols(&head_outputs);
        let wo_t = tape.transpose(vars.wo);
        tape.matmul(merged, wo_t)
    }

    // tanh keeps the whole dialogue objective smooth, which the finite
    // difference checks rely on
    fn ffn(&self, tape: &mut Tape, x: Var, vars: &FfnVars) -> Var {
        let w1_t = tape.transpose(vars.w1);
        let hidden = tape.matmul(x, w1_t);
        let hidden = tape.add_row(hidden, vars.b1);
        let act = tape.tanh(hidden);
        let w2_t = tape.transpose(vars.w2);
        let out = tape.matmul(act, w2_t);
        tape.add_row(out, vars.b2)
    }

    fn embed(&self, tape: &mut Tape, vars: &DialogueVars, tokens: &[usize]) -> Var {
        let emb = tape.gather_rows(vars.token_emb, tokens);
        let pos = tape.leaf(positional_encoding(tokens.len(), self.config.dim));
        tape.add(emb, pos)
    }

    /// Left-truncates a context to the configured maximum; returns the
    /// kept suffix and whether anything was dropped.
    pub fn truncate_context<'a>(&self, context: &'a [usize]) -> (&'a [usize], bool) {
        if context.len() > self.config.max_context_len {
            (&context[context.len() - self.config.max_context_len..], true)
        } else {
            (context, false)
        }
    }

    /// Encoder states of a context; an empty context encodes a single
    /// `BOS` position. `pad` marks positions to hide from attention (its
    /// length must match the effective input when given).
    pub fn encode_context(
        &self,
        tape: &mut Tape,
        vars: &DialogueVars,
        context: &[usize],
        pad: Option<&[bool]>,
    ) -> Var {
        let (context, _) = self.truncate_context(context);
        let bos = [Vocab::BOS];
        let tokens: &[usize] = if context.is_empty() { &bos } else { context };
        let t = tokens.len();
        let mask = pad.map(|flags| {
            assert_eq!(flags.len(), t, "pad mask length mismatch");
            Array::from_fn(t, t, |_, key| if flags[key] { MASK_VALUE } else { 0.0 })
        });
        let mut x = self.embed(tape, vars, tokens);
        for layer in &vars.enc {
            let attended = self.attention(tape, x, x, &layer.attn, mask.as_ref());
            let summed = tape.add(x, attended);
            x = tape.layer_norm_rows(summed, layer.ln1.gamma, layer.ln1.beta, 1e-5);
            let ff = self.ffn(tape, x, &layer.ffn);
            let summed = tape.add(x, ff);
            x = tape.layer_norm_rows(summed, layer.ln2.gamma, layer.ln2.beta, 1e-5);
        }
        x
    }

    fn decode(
        &self,
        tape: &mut Tape,
        vars: &DialogueVars,
        enc_states: Var,
        enc_pad: Option<&[bool]>,
        dec_tokens: &[usize],
    ) -> Var {
        let t = dec_tokens.len();
        let t_enc = tape.value(enc_states).rows();
        let causal = Array::from_fn(t, t, |q, k| if k > q { MASK_VALUE } else { 0.0 });
        let cross = enc_pad.map(|flags| {
            assert_eq!(flags.len(), t_enc);
            Array::from_fn(t, t_enc, |_, key| if flags[key] { MASK_VALUE } else { 0.0 })
        });
        let mut x = self.embed(tape, vars, dec_tokens);
        for layer in &vars.dec {
            let attended = self.attention(tape, x, x, &layer.self_attn, Some(&causal));
            let summed = tape.add(x, attended);
            x = tape.layer_norm_rows(summed, layer.ln1.gamma, layer.ln1.beta, 1e-5);
            let crossed = self.attention(tape, x, enc_states, &layer.cross_attn, cross.as_ref());
            let summed = tape.add(x, crossed);
            x = tape.layer_norm_rows(summed, layer.ln2.gamma, layer.ln2.beta, 1e-5);
            let ff = self.ffn(tape, x, &layer.ffn);
            let summed = tape.add(x, ff);
            x = tape.layer_norm_rows(summed, layer.ln3.gamma, layer.ln3.beta, 1e-5);
        }
        x
    }

    /// Per-position vocabulary logits with the user bias added to every row.
    pub fn output_logits(&self, tape: &mut Tape, vars: &DialogueVars, states: Var, user_vec: &Array) -> Var {
        assert_eq!(user_vec.shape(), (1, self.config.user_dim));
        let w_t = tape.transpose(vars.out_proj);
        let base = tape.matmul(states, w_t); // T x |V|
        let user = tape.leaf(user_vec.clone());
        let m_t = tape.transpose(vars.bias_map);
        let bias = tape.matmul(user, m_t); // 1 x |V|
        tape.add_row(base, bias)
    }

    /// The next-token distribution of a single decoder state row.
    pub fn next_token_distribution(
        &self,
        tape: &mut Tape,
        vars: &DialogueVars,
        state: Var,
        user_vec: &Array,
    ) -> Var {
        let logits = self.output_logits(tape, vars, state, user_vec);
        tape.softmax_rows(logits)
    }

    /// Teacher-forced label NLL: returns the summed negative log
    /// likelihood node and the number of scored positions.
    pub fn sequence_nll(
        &self,
        tape: &mut Tape,
        vars: &DialogueVars,
        instance: &DialogueInstance,
        user_vec: &Array,
    ) -> (Var, usize) {
        let enc = self.encode_context(tape, vars, &instance.context, None);
        let mut dec_input = Vec::with_capacity(instance.response.len());
        dec_input.push(Vocab::BOS);
        dec_input.extend_from_slice(&instance.response[..instance.response.len() - 1]);
        let states = self.decode(tape, vars, enc, None, &dec_input);
        let logits = self.output_logits(tape, vars, states, user_vec);
        let logp = tape.log_softmax_rows(logits);
        let picked = tape.select_cols(logp, &instance.response);
        // PAD targets are excluded from the mean; our extraction never
        // emits them inside a response but padded corpora may
        let mask = Array::from_fn(instance.response.len(), 1, |r, _| {
            if instance.response[r] == Vocab::PAD {
                0.0
            } else {
                1.0
            }
        });
        let n_scored = mask.as_slice().iter().filter(|&&m| m > 0.0).count();
        let mask_leaf = tape.leaf(mask);
        let masked = tape.mul(picked, mask_leaf);
        let total = tape.sum_all(masked);
        let nll = tape.scale(total, -1.0);
        (nll, n_scored)
    }

    /// Mean per-token NLL over a batch of instances.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        instances: &[&DialogueInstance],
        user_vecs: &[&Array],
    ) -> (Var, DialogueVars) {
        assert!(!instances.is_empty());
        assert_eq!(instances.len(), user_vecs.len());
        let vars = self.inject(tape);
        let mut total: Option<Var> = None;
        let mut tokens = 0usize;
        for (inst, user) in instances.iter().zip(user_vecs) {
            let (nll, n) = self.sequence_nll(tape, &vars, inst, user);
            tokens += n;
            total = Some(match total {
                Some(t) => tape.add(t, nll),
                None => nll,
            });
        }
        let loss = tape.scale(total.expect("nonempty batch"), 1.0 / tokens.max(1) as f64);
        (loss, vars)
    }

    /// Value-only mean NLL of a set of instances (for perplexity).
    pub fn mean_nll(&self, instances: &[&DialogueInstance], user_vecs: &[&Array]) -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = self.batch_loss(&mut tape, instances, user_vecs);
        tape.value(loss).get(0, 0)
    }

    /// Greedy or beam decoding until `EOS` or the length cap. Pure in
    /// (parameters, context, user vector, config).
    pub fn generate(&self, context: &[usize], user_vec: &Array, gen: &GenConfig) -> Vec<usize> {
        match gen.beam {
            None | Some(0) | Some(1) => self.generate_greedy(context, user_vec, gen.max_len),
            Some(width) => self.generate_beam(context, user_vec, gen.max_len, width),
        }
    }

    fn step_logprobs(
        &self,
        tape: &mut Tape,
        vars: &DialogueVars,
        enc: Var,
        prefix: &[usize],
        user_vec: &Array,
    ) -> Vec<f64> {
        let states = self.decode(tape, vars, enc, None, prefix);
        let logits = self.output_logits(tape, vars, states, user_vec);
        let logp = tape.log_softmax_rows(logits);
        tape.value(logp).row(prefix.len() - 1).to_vec()
    }

    fn generate_greedy(&self, context: &[usize], user_vec: &Array, max_len: usize) -> Vec<usize> {
        let mut tape = Tape::new();
        let vars = self.inject(&mut tape);
        let enc = self.encode_context(&mut tape, &vars, context, None);
        let mut prefix = vec![Vocab::BOS];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logp = self.step_logprobs(&mut tape, &vars, enc, &prefix, user_vec);
            let next = argmax(&logp);
            out.push(next);
            if next == Vocab::EOS {
                break;
            }
            prefix.push(next);
        }
        out
    }

    fn generate_beam(&self, context: &[usize], user_vec: &Array, max_len: usize, width: usize) -> Vec<usize> {
        let mut tape = Tape::new();
        let vars = self.inject(&mut tape);
        let enc = self.encode_context(&mut tape, &vars, context, None);

        // (prefix including BOS, cumulative logprob, finished)
        let mut beams: Vec<(Vec<usize>, f64, bool)> = vec![(vec![Vocab::BOS], 0.0, false)];
        for _ in 0..max_len {
            let mut candidates: Vec<(Vec<usize>, f64, bool)> = Vec::new();
            for (prefix, score, finished) in &beams {
                if *finished {
                    candidates.push((prefix.clone(), *score, true));
                    continue;
                }
                let logp = self.step_logprobs(&mut tape, &vars, enc, prefix, user_vec);
                let mut ranked: Vec<usize> = (0..logp.len()).collect();
                ranked.sort_by(|&a, &b| logp[b].partial_cmp(&logp[a]).unwrap().then(a.cmp(&b)));
                for &token in ranked.iter().take(width) {
                    let mut next = prefix.clone();
                    next.push(token);
                    candidates.push((next, score + logp[token], token == Vocab::EOS));
                }
            }
            candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            candidates.truncate(width);
            let done = candidates.iter().all(|(_, _, f)| *f);
            beams = candidates;
            if done {
                break;
            }
        }
        let best = beams.into_iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).expect("beam nonempty");
        best.0[1..].to_vec()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
