//! Self-supervised multi-view preference alignment.
//!
//! For a batch of per-user view pairs `(v1_u, v2_u)` the loss pulls each
//! user's two views together and pushes all cross-user ordered pairs
//! apart:
//!
//! ```text
//! L = sum_u (1 - cos(v1_u, v2_u))^2 + lambda * sum_{u != u'} cos(v1_u, v2_u')^2
//! ```
//!
//! A pair with either side of norm below `ZERO_NORM_EPS` contributes
//! nothing and is excluded from the negative sums (cosine is undefined
//! there; this covers cold-start users with empty views).
//!
//! Three task pairs are aligned per batch: current word/entity views,
//! historical word/entity views, and the historical item view against the
//! historical intent vector. Current and historical views are never
//! aligned against each other.

use crate::session::UserViews;
use crate::tape::{Tape, Var};
use crate::tensor::Array;

pub const ZERO_NORM_EPS: f64 = 1e-8;

/// The alignment loss over parallel per-user view vectors (each `1 x d`).
pub fn alignment_loss(tape: &mut Tape, v1: &[Var], v2: &[Var], lambda: f64) -> Var {
    assert_eq!(v1.len(), v2.len(), "view batches must be parallel");
    assert!(lambda >= 0.0);
    let b = v1.len();
    if b == 0 {
        return tape.scalar(0.0);
    }

    let valid1: Vec<bool> = v1.iter().map(|&v| tape.value(v).norm() >= ZERO_NORM_EPS).collect();
    let valid2: Vec<bool> = v2.iter().map(|&v| tape.value(v).norm() >= ZERO_NORM_EPS).collect();

    let s1 = tape.concat_rows(v1); // B x d
    let s2 = tape.concat_rows(v2);
    let n1 = tape.normalize_rows(s1);
    let n2 = tape.normalize_rows(s2);
    let n2t = tape.transpose(n2);
    let sims = tape.matmul(n1, n2t); // B x B of cosines

    // positives: diagonal entries where both sides are valid
    let diag_idx: Vec<usize> = (0..b).collect();
    let diag = tape.select_cols(sims, &diag_idx); // B x 1
    let pos_mask = tape.leaf(Array::from_fn(b, 1, |r, _| {
        if valid1[r] && valid2[r] {
            1.0
        } else {
            0.0
        }
    }));
    let neg_diag = tape.scale(diag, -1.0);
    let gap = tape.add_const(neg_diag, 1.0); // 1 - cos
    let gap_sq = tape.mul(gap, gap);
    let pos_terms = tape.mul(gap_sq, pos_mask);
    let pos_loss = tape.sum_all(pos_terms);

    // negatives: all ordered off-diagonal pairs with both sides valid
    let neg_mask = tape.leaf(Array::from_fn(b, b, |r, c| {
        if r != c && valid1[r] && valid2[c] {
            1.0
        } else {
            0.0
        }
    }));
    let sims_sq = tape.mul(sims, sims);
    let neg_terms = tape.mul(sims_sq, neg_mask);
    let neg_sum = tape.sum_all(neg_terms);
    let neg_loss = tape.scale(neg_sum, lambda);

    tape.add(pos_loss, neg_loss)
}

/// The three task pairs aligned for a batch of users. Order:
/// current word/entity, historical word/entity, item/intent.
pub fn task_pairs(views: &[UserViews]) -> [Vec<(Var, Var)>; 3] {
    [
        views.iter().map(|v| (v.current_word, v.current_entity)).collect(),
        views.iter().map(|v| (v.hist_word, v.hist_entity)).collect(),
        views.iter().map(|v| (v.hist_item, v.hist_intent)).collect(),
    ]
}

/// Sum of the alignment loss over the three tasks.
pub fn total_alignment_loss(tape: &mut Tape, views: &[UserViews], lambda: f64) -> Var {
    let tasks = task_pairs(views);
    let mut total = tape.scalar(0.0);
    for pairs in &tasks {
        let v1: Vec<Var> = pairs.iter().map(|p| p.0).collect();
        let v2: Vec<Var> = pairs.iter().map(|p| p.1).collect();
        let loss = alignment_loss(tape, &v1, &v2, lambda);
        total = tape.add(total, loss);
    }
    total
}

/// Double-loop re-implementation over plain arrays, used as the test
/// oracle for [`alignment_loss`].
pub fn alignment_loss_naive(v1: &[Array], v2: &[Array], lambda: f64) -> f64 {
    let b = v1.len();
    let valid = |v: &Array| v.norm() >= ZERO_NORM_EPS;
    let cos = |a: &Array, b: &Array| a.dot(b) / (a.norm() * b.norm());
    let mut loss = 0.0;
    for u in 0..b {
        if valid(&v1[u]) && valid(&v2[u]) {
            let c = cos(&v1[u], &v2[u]);
            loss += (1.0 - c) * (1.0 - c);
        }
        for uu in 0..b {
            if uu != u && valid(&v1[u]) && valid(&v2[uu]) {
                let c = cos(&v1[u], &v2[uu]);
                loss += lambda * c * c;
            }
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval_loss(v1: &[Array], v2: &[Array], lambda: f64) -> f64 {
        let mut tape = Tape::new();
        let a: Vec<Var> = v1.iter().map(|v| tape.leaf(v.clone())).collect();
        let b: Vec<Var> = v2.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = alignment_loss(&mut tape, &a, &b, lambda);
        tape.value(loss).get(0, 0)
    }

    #[test]
    fn aligned_orthogonal_batch_is_zero() {
        let e1 = Array::row_vec(vec![1.0, 0.0]);
        let e2 = Array::row_vec(vec![0.0, 1.0]);
        let loss = eval_loss(&[e1.clone(), e2.clone()], &[e1, e2], 0.1);
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn single_orthogonal_pair_costs_one() {
        let v1 = Array::row_vec(vec![1.0, 0.0]);
        let v2 = Array::row_vec(vec![0.0, 1.0]);
        let loss = eval_loss(&[v1], &[v2], 0.1);
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_units_batch_of_two_costs_two_lambda() {
        let v = Array::row_vec(vec![1.0, 0.0, 0.0]);
        let lambda = 0.1;
        let loss = eval_loss(&[v.clone(), v.clone()], &[v.clone(), v], lambda);
        assert!((loss - 2.0 * lambda).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v1: Vec<Array> = (0..4).map(|_| Array::uniform(1, 6, 1.0, &mut rng)).collect();
        let v2: Vec<Array> = (0..4).map(|_| Array::uniform(1, 6, 1.0, &mut rng)).collect();
        let base = eval_loss(&v1, &v2, 0.1);
        let mut scaled = v1.clone();
        scaled[2] = scaled[2].scale(3.7);
        let after = eval_loss(&scaled, &v2, 0.1);
        assert!((base - after).abs() < 1e-10);
    }

    #[test]
    fn zero_norm_side_is_excluded_everywhere() {
        let v = Array::row_vec(vec![1.0, 0.0]);
        let zero = Array::row_vec(vec![0.0, 0.0]);
        // user 0's first view is dead: its positive and the (0, 1)
        // negative vanish; the (1, 0) negative survives since both of
        // its sides are nonzero
        let lambda = 0.5;
        let loss = eval_loss(&[zero.clone(), v.clone()], &[v.clone(), v.clone()], lambda);
        assert!((loss - lambda).abs() < 1e-12, "{loss}");
        // with both of user 0's views dead the surviving negative goes too
        let loss2 = eval_loss(&[zero.clone(), v.clone()], &[zero, v], lambda);
        assert!(loss2.abs() < 1e-12, "{loss2}");
    }

    #[test]
    fn matches_naive_oracle_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let b = rng.gen_range(1..=8);
            let d = rng.gen_range(2..=6);
            let mut v1: Vec<Array> = (0..b).map(|_| Array::uniform(1, d, 2.0, &mut rng)).collect();
            let v2: Vec<Array> = (0..b).map(|_| Array::uniform(1, d, 2.0, &mut rng)).collect();
            if b > 2 && rng.gen::<bool>() {
                v1[0] = Array::zeros(1, d); // exercise the guard
            }
            let fast = eval_loss(&v1, &v2, 0.1);
            let naive = alignment_loss_naive(&v1, &v2, 0.1);
            assert!((fast - naive).abs() < 1e-9, "fast {fast} vs naive {naive}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v1: Vec<Array> = (0..3).map(|_| Array::uniform(1, 4, 1.0, &mut rng)).collect();
        let v2: Vec<Array> = (0..3).map(|_| Array::uniform(1, 4, 1.0, &mut rng)).collect();

        let mut tape = Tape::new();
        let a: Vec<Var> = v1.iter().map(|v| tape.leaf(v.clone())).collect();
        let b: Vec<Var> = v2.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = alignment_loss(&mut tape, &a, &b, 0.1);
        let grads = tape.backward(loss);

        let h = 1e-5;
        for u in 0..3 {
            for c in 0..4 {
                let orig = v1[u].get(0, c);
                let mut up = v1.clone();
                up[u].set(0, c, orig + h);
                let mut down = v1.clone();
                down[u].set(0, c, orig - h);
                let fd = (eval_loss(&up, &v2, 0.1) - eval_loss(&down, &v2, 0.1)) / (2.0 * h);
                let an = grads.get(a[u]).get(0, c);
                assert!(
                    (an - fd).abs() / f64::max(1e-6, an.abs() + fd.abs()) < 1e-4,
                    "v1[{u}][{c}]: {an} vs {fd}"
                );
            }
        }
    }
}
