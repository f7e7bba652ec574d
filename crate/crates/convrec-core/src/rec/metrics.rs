//! Ranking metrics: hit rate, MRR and NDCG at cutoffs 10 and 50, with
//! cohort breakdowns by current-entity count and new/old users.
//!
//! Every instance has exactly one relevant item, so the ideal DCG is 1
//! and NDCG@k reduces to `1/log2(rank+1)` when the label ranks within k.
//! Ranking is by descending score with ties broken by item position, so
//! metric documents are reproducible.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// 1-based rank of `label` under descending scores, ties resolved by
/// item position (smaller index ranks first).
pub fn rank_of_label(scores: &[f64], label: usize) -> usize {
    let target = scores[label];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > target || (s == target && i < label) {
            rank += 1;
        }
    }
    rank
}

/// One evaluated instance: its label rank plus cohort facts.
#[derive(Clone, Copy, Debug)]
pub struct InstanceScore {
    pub rank: usize,
    pub n_context_entities: usize,
    pub cold_start_user: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    #[serde(rename = "hr@10")]
    pub hr_10: f64,
    #[serde(rename = "hr@50")]
    pub hr_50: f64,
    #[serde(rename = "mrr@10")]
    pub mrr_10: f64,
    #[serde(rename = "mrr@50")]
    pub mrr_50: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_10: f64,
    #[serde(rename = "ndcg@50")]
    pub ndcg_50: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub overall: MetricRow,
    /// Buckets `0, 1, 2, 3, 4-5, >=6`; together they partition the
    /// instances. Empty buckets serialize as null.
    pub by_entity_count: BTreeMap<String, Option<MetricRow>>,
    /// `new` users have no train-part history; `old` users do.
    pub by_user_cohort: BTreeMap<String, Option<MetricRow>>,
}

pub fn hr_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn mrr_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn entity_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2 => "2",
        3 => "3",
        4 | 5 => "4-5",
        _ => ">=6",
    }
}

pub const ENTITY_BUCKETS: [&str; 6] = ["0", "1", "2", "3", "4-5", ">=6"];

fn aggregate(ranks: &[usize]) -> Option<MetricRow> {
    if ranks.is_empty() {
        return None;
    }
    let n = ranks.len() as f64;
    let mut row = MetricRow { count: ranks.len(), ..Default::default() };
    for &rank in ranks {
        row.hr_10 += hr_at(rank, 10);
        row.hr_50 += hr_at(rank, 50);
        row.mrr_10 += mrr_at(rank, 10);
        row.mrr_50 += mrr_at(rank, 50);
        row.ndcg_10 += ndcg_at(rank, 10);
        row.ndcg_50 += ndcg_at(rank, 50);
    }
    row.hr_10 /= n;
    row.hr_50 /= n;
    row.mrr_10 /= n;
    row.mrr_50 /= n;
    row.ndcg_10 /= n;
    row.ndcg_50 /= n;
    Some(row)
}

/// Aggregates scored instances into the full report. Panics on an empty
/// slice; callers gate on nonempty evaluation sets.
pub fn evaluate_instances(scored: &[InstanceScore]) -> RankingReport {
    assert!(!scored.is_empty(), "cannot evaluate zero instances");
    let all: Vec<usize> = scored.iter().map(|s| s.rank).collect();

    let mut by_entity_count = BTreeMap::new();
    for bucket in ENTITY_BUCKETS {
        let ranks: Vec<usize> = scored
            .iter()
            .filter(|s| entity_bucket(s.n_context_entities) == bucket)
            .map(|s| s.rank)
            .collect();
        by_entity_count.insert(bucket.to_string(), aggregate(&ranks));
    }

    let mut by_user_cohort = BTreeMap::new();
    for (key, cold) in [("new", true), ("old", false)] {
        let ranks: Vec<usize> = scored
            .iter()
            .filter(|s| s.cold_start_user == cold)
            .map(|s| s.rank)
            .collect();
        by_user_cohort.insert(key.to_string(), aggregate(&ranks));
    }

    RankingReport {
        overall: aggregate(&all).expect("nonempty"),
        by_entity_count,
        by_user_cohort,
    }
}

/// Brute-force rank oracle: stable full sort by descending score.
pub fn rank_by_full_sort(scores: &[f64], label: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&i| i == label).unwrap() + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        // label ranked first
        assert_eq!(hr_at(1, 10), 1.0);
        assert_eq!(mrr_at(1, 10), 1.0);
        assert_eq!(ndcg_at(1, 10), 1.0);
        // label ranked third
        assert!((mrr_at(3, 10) - 1.0 / 3.0).abs() < 1e-12);
        assert!((ndcg_at(3, 10) - 0.5).abs() < 1e-12); // 1/log2(4)
        // label ranked eleventh
        assert_eq!(hr_at(11, 10), 0.0);
        assert_eq!(hr_at(11, 50), 1.0);
    }

    #[test]
    fn rank_breaks_ties_by_item_position() {
        let scores = [0.5, 0.9, 0.5, 0.5];
        assert_eq!(rank_of_label(&scores, 1), 1);
        assert_eq!(rank_of_label(&scores, 0), 2);
        assert_eq!(rank_of_label(&scores, 2), 3);
        assert_eq!(rank_of_label(&scores, 3), 4);
    }

    #[test]
    fn buckets_partition_counts() {
        let scored: Vec<InstanceScore> = (0..40)
            .map(|i| InstanceScore { rank: 1 + i % 12, n_context_entities: i % 8, cold_start_user: i % 3 == 0 })
            .collect();
        let report = evaluate_instances(&scored);
        let bucket_total: usize = report
            .by_entity_count
            .values()
            .map(|r| r.map(|m| m.count).unwrap_or(0))
            .sum();
        assert_eq!(bucket_total, scored.len());
        let cohort_total: usize = report
            .by_user_cohort
            .values()
            .map(|r| r.map(|m| m.count).unwrap_or(0))
            .sum();
        assert_eq!(cohort_total, scored.len());
        assert_eq!(report.overall.count, scored.len());
    }

    #[test]
    fn empty_cohorts_are_null_in_the_document() {
        let scored = vec![InstanceScore { rank: 2, n_context_entities: 1, cold_start_user: false }];
        let report = evaluate_instances(&scored);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"0\":null"));
        assert!(json.contains("\"new\":null"));
        assert!(json.contains("\"hr@10\""));
    }

    proptest! {
        #[test]
        fn fast_rank_matches_full_sort_oracle(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..50),
            label_seed in 0usize..50,
        ) {
            let label = label_seed % scores.len();
            prop_assert_eq!(rank_of_label(&scores, label), rank_by_full_sort(&scores, label));
        }

        #[test]
        fn metrics_are_monotone_in_k(rank in 1usize..200) {
            prop_assert!(hr_at(rank, 10) <= hr_at(rank, 50));
            prop_assert!(mrr_at(rank, 10) <= mrr_at(rank, 50));
            prop_assert!(ndcg_at(rank, 10) <= ndcg_at(rank, 50));
        }
    }
}
