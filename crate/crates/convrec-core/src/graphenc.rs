//! Graph encoders: relational graph convolution over the knowledge graph,
//! plain graph convolution over the lexical graph, and self-attentive
//! pooling of gathered embedding rows.
//!
//! Entity vectors are rows: an encoder maps a `|E| x d` base table to a
//! `|E| x d` output table. The layer rule for the relational encoder is
//!
//! ```text
//! V' = relu( sum_r A_r V W_r^T + V W_self^T )
//! ```
//!
//! with `A_r` the neighbor-mean adjacency of relation `r` (triples are
//! treated as undirected for neighborhoods, `Z_{e,r} = |N_e^r|`). The
//! plain encoder uses the symmetric normalization
//! `D^{-1/2} (A + I) D^{-1/2}` with self-loops.

use crate::tape::{Tape, Var};
use crate::tensor::Array;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct RgcnLayer {
    /// One `d x d` weight per relation.
    pub w_rel: Vec<Array>,
    pub w_self: Array,
}

#[derive(Clone, Debug)]
pub struct RgcnParams {
    /// Base entity embeddings, `|E| x d`.
    pub base: Array,
    pub layers: Vec<RgcnLayer>,
}

#[derive(Clone, Debug)]
pub struct GcnParams {
    /// Base word embeddings, `|W| x d`.
    pub base: Array,
    /// One `d x d` weight per layer.
    pub layers: Vec<Array>,
}

/// Self-attentive pooling: `mu = softmax(b tanh(W V))`, `out = F(mu V^T)`.
#[derive(Clone, Debug)]
pub struct PoolParams {
    pub score_vec: Array, // 1 x d
    pub score_mat: Array, // d x d
    pub out_map: Array,   // d x d
}

pub struct RgcnLayerVars {
    pub w_rel: Vec<Var>,
    pub w_self: Var,
}

pub struct RgcnVars {
    pub base: Var,
    pub layers: Vec<RgcnLayerVars>,
}

pub struct GcnVars {
    pub base: Var,
    pub layers: Vec<Var>,
}

pub struct PoolVars {
    pub score_vec: Var,
    pub score_mat: Var,
    pub out_map: Var,
}

fn fan_in_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    let bound = 1.0 / (cols as f64).sqrt();
    Array::uniform(rows, cols, bound, rng)
}

impl RgcnParams {
    pub fn init(n_entities: usize, n_relations: usize, d: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let base = Array::uniform(n_entities, d, 1.0 / (d as f64).sqrt(), rng);
        let layers = (0..n_layers)
            .map(|_| RgcnLayer {
                w_rel: (0..n_relations).map(|_| fan_in_uniform(d, d, rng)).collect(),
                w_self: fan_in_uniform(d, d, rng),
            })
            .collect();
        RgcnParams { base, layers }
    }

    pub fn inject(&self, tape: &mut Tape) -> RgcnVars {
        RgcnVars {
            base: tape.leaf(self.base.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| RgcnLayerVars {
                    w_rel: l.w_rel.iter().map(|w| tape.leaf(w.clone())).collect(),
                    w_self: tape.leaf(l.w_self.clone()),
                })
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.base"), &self.base));
        for (l, layer) in self.layers.iter().enumerate() {
            for (r, w) in layer.w_rel.iter().enumerate() {
                out.push((format!("{prefix}.l{l}.rel{r}"), w));
            }
            out.push((format!("{prefix}.l{l}.self"), &layer.w_self));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.base"), &mut self.base));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (r, w) in layer.w_rel.iter_mut().enumerate() {
                out.push((format!("{prefix}.l{l}.rel{r}"), w));
            }
            out.push((format!("{prefix}.l{l}.self"), &mut layer.w_self));
        }
    }
}

impl GcnParams {
    pub fn init(n_words: usize, d: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        GcnParams {
            base: Array::uniform(n_words, d, 1.0 / (d as f64).sqrt(), rng),
            layers: (0..n_layers).map(|_| fan_in_uniform(d, d, rng)).collect(),
        }
    }

    pub fn inject(&self, tape: &mut Tape) -> GcnVars {
        GcnVars {
            base: tape.leaf(self.base.clone()),
            layers: self.layers.iter().map(|w| tape.leaf(w.clone())).collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.base"), &self.base));
        for (l, w) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.l{l}"), w));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.base"), &mut self.base));
        for (l, w) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.l{l}"), w));
        }
    }
}

impl PoolParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        PoolParams {
            score_vec: fan_in_uniform(1, d, rng),
            score_mat: fan_in_uniform(d, d, rng),
            out_map: fan_in_uniform(d, d, rng),
        }
    }

    pub fn inject(&self, tape: &mut Tape) -> PoolVars {
        PoolVars {
            score_vec: tape.leaf(self.score_vec.clone()),
            score_mat: tape.leaf(self.score_mat.clone()),
            out_map: tape.leaf(self.out_map.clone()),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        out.push((format!("{prefix}.score_vec"), &self.score_vec));
        out.push((format!("{prefix}.score_mat"), &self.score_mat));
        out.push((format!("{prefix}.out_map"), &self.out_map));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        out.push((format!("{prefix}.score_vec"), &mut self.score_vec));
        out.push((format!("{prefix}.score_mat"), &mut self.score_mat));
        out.push((format!("{prefix}.out_map"), &mut self.out_map));
    }
}

/// Neighbor-mean adjacency per relation. Triple direction is ignored when
/// collecting neighborhoods; duplicate neighbors count once.
pub fn relation_adjacency(
    n_entities: usize,
    n_relations: usize,
    triples: &[(usize, usize, usize)],
) -> Vec<Array> {
    let mut neighbor_sets: Vec<Vec<std::collections::BTreeSet<usize>>> =
        vec![vec![std::collections::BTreeSet::new(); n_entities]; n_relations];
    for &(h, r, t) in triples {
        neighbor_sets[r][h].insert(t);
        neighbor_sets[r][t].insert(h);
    }
    neighbor_sets
        .into_iter()
        .map(|sets| {
            let mut a = Array::zeros(n_entities, n_entities);
            for (e, neighbors) in sets.iter().enumerate() {
                if neighbors.is_empty() {
                    continue;
                }
                let z = neighbors.len() as f64;
                for &n in neighbors {
                    a.set(e, n, 1.0 / z);
                }
            }
            a
        })
        .collect()
}

/// Symmetric-normalized adjacency with self-loops over undirected edges.
pub fn gcn_adjacency(n_words: usize, edges: &[(usize, usize)]) -> Array {
    let mut adj = Array::zeros(n_words, n_words);
    for i in 0..n_words {
        adj.set(i, i, 1.0);
    }
    for &(a, b) in edges {
        adj.set(a, b, 1.0);
        adj.set(b, a, 1.0);
    }
    let degrees: Vec<f64> = (0..n_words).map(|i| adj.row(i).iter().sum()).collect();
    let mut out = Array::zeros(n_words, n_words);
    for i in 0..n_words {
        for j in 0..n_words {
            let v = adj.get(i, j);
            if v != 0.0 {
                out.set(i, j, v / (degrees[i] * degrees[j]).sqrt());
            }
        }
    }
    out
}

/// Encodes the knowledge graph; returns the last layer's `|E| x d` table.
pub fn rgcn_encode(tape: &mut Tape, adjacency: &[Array], vars: &RgcnVars) -> Var {
    let mut table = vars.base;
    for layer in &vars.layers {
        assert_eq!(layer.w_rel.len(), adjacency.len(), "relation count mismatch");
        let mut acc = {
            let wt = tape.transpose(layer.w_self);
            tape.matmul(table, wt)
        };
        for (r, adj) in adjacency.iter().enumerate() {
            let a = tape.leaf(adj.clone());
            let mixed = tape.matmul(a, table);
            let wt = tape.transpose(layer.w_rel[r]);
            let term = tape.matmul(mixed, wt);
            acc = tape.add(acc, term);
        }
        table = tape.relu(acc);
    }
    table
}

/// Encodes the lexical graph; returns the last layer's `|W| x d` table.
pub fn gcn_encode(tape: &mut Tape, adjacency: &Array, vars: &GcnVars) -> Var {
    let mut table = vars.base;
    for &w in &vars.layers {
        let a = tape.leaf(adjacency.clone());
        let mixed = tape.matmul(a, table);
        let wt = tape.transpose(w);
        let term = tape.matmul(mixed, wt);
        table = tape.relu(term);
    }
    table
}

/// Pools `t` embedding rows into one vector; returns `(pooled, weights)`
/// with weights a `1 x t` softmax row.
pub fn attention_pool(tape: &mut Tape, rows: Var, vars: &PoolVars) -> (Var, Var) {
    let wt = tape.transpose(vars.score_mat);
    let hidden = tape.matmul(rows, wt); // t x d
    let act = tape.tanh(hidden);
    let bt = tape.transpose(vars.score_vec); // d x 1
    let scores = tape.matmul(act, bt); // t x 1
    let scores_row = tape.transpose(scores); // 1 x t
    let weights = tape.softmax_rows(scores_row);
    let pooled = tape.matmul(weights, rows); // 1 x d
    let ft = tape.transpose(vars.out_map);
    let out = tape.matmul(pooled, ft);
    (out, weights)
}

/// Gathers `ids` from a table and pools them; the empty set pools to the
/// zero vector (cold start).
pub fn pool_mentions(
    tape: &mut Tape,
    table: Var,
    ids: &[usize],
    vars: &PoolVars,
    d: usize,
) -> (Var, Option<Var>) {
    if ids.is_empty() {
        return (tape.leaf(Array::zeros(1, d)), None);
    }
    let rows = tape.gather_rows(table, ids);
    let (out, weights) = attention_pool(tape, rows, vars);
    (out, Some(weights))
}
