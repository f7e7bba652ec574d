//! Generation metrics: corpus BLEU-n with brevity penalty and clipped
//! counts, distinct n-gram ratios (corpus-level and sentence-averaged),
//! and perplexity.
//!
//! BLEU precision terms use `(matches + eps) / (total + eps)` so a zero
//! match count stays finite while an exact hypothesis-reference match
//! still scores exactly 1. Distinct ratios above can be computed two
//! ways in the literature; both the corpus-level ratio and the
//! per-sentence mean are reported, keyed separately.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const BLEU_EPS: f64 = 1e-9;

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Cumulative corpus BLEU-n: geometric mean of the 1..=n clipped
/// precisions times the brevity penalty.
pub fn bleu_n(hypotheses: &[Vec<usize>], references: &[Vec<usize>], n: usize) -> f64 {
    assert_eq!(hypotheses.len(), references.len(), "parallel corpora required");
    assert!(n >= 1);
    if hypotheses.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let mut matches = 0usize;
        let mut total = 0usize;
        for (hyp, reference) in hypotheses.iter().zip(references) {
            let hyp_counts = ngram_counts(hyp, order);
            let ref_counts = ngram_counts(reference, order);
            for (gram, &count) in &hyp_counts {
                total += count;
                let allowed = ref_counts.get(gram).copied().unwrap_or(0);
                matches += count.min(allowed);
            }
        }
        let precision = (matches as f64 + BLEU_EPS) / (total as f64 + BLEU_EPS);
        log_sum += precision.ln() / n as f64;
    }
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    let brevity = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    brevity * log_sum.exp()
}

/// Distinct n-grams over the whole corpus divided by total n-grams.
pub fn distinct_n_corpus(hypotheses: &[Vec<usize>], n: usize) -> f64 {
    let mut seen: std::collections::HashSet<&[usize]> = std::collections::HashSet::new();
    let mut total = 0usize;
    for hyp in hypotheses {
        if hyp.len() >= n {
            for gram in hyp.windows(n) {
                seen.insert(gram);
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Mean over sentences of the per-sentence distinct ratio; sentences
/// shorter than `n` are skipped.
pub fn distinct_n_sentence_mean(hypotheses: &[Vec<usize>], n: usize) -> f64 {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for hyp in hypotheses {
        if hyp.len() < n {
            continue;
        }
        let total = hyp.len() - n + 1;
        let distinct = hyp.windows(n).collect::<std::collections::HashSet<_>>().len();
        sum += distinct as f64 / total as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        sum / counted as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueReport {
    pub bleu2: f64,
    pub bleu3: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub dist4: f64,
    pub ppl: f64,
    pub dist2_sentence_mean: f64,
    pub dist3_sentence_mean: f64,
    pub dist4_sentence_mean: f64,
    pub count: usize,
}

/// Aggregates the full generation report. `mean_nll` is the held-out
/// teacher-forced mean per-token negative log likelihood.
pub fn evaluate_dialogue(
    hypotheses: &[Vec<usize>],
    references: &[Vec<usize>],
    mean_nll: f64,
) -> DialogueReport {
    DialogueReport {
        bleu2: bleu_n(hypotheses, references, 2),
        bleu3: bleu_n(hypotheses, references, 3),
        dist2: distinct_n_corpus(hypotheses, 2),
        dist3: distinct_n_corpus(hypotheses, 3),
        dist4: distinct_n_corpus(hypotheses, 4),
        ppl: mean_nll.exp(),
        dist2_sentence_mean: distinct_n_sentence_mean(hypotheses, 2),
        dist3_sentence_mean: distinct_n_sentence_mean(hypotheses, 3),
        dist4_sentence_mean: distinct_n_sentence_mean(hypotheses, 4),
        count: hypotheses.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_corpora_score_bleu_one() {
        let sentences = vec![vec![1, 2, 3, 4], vec![5, 6, 7]];
        assert!((bleu_n(&sentences, &sentences, 2) - 1.0).abs() < 1e-12);
        assert!((bleu_n(&sentences, &sentences, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_corpora_score_near_zero() {
        let hyp = vec![vec![1, 2, 3]];
        let reference = vec![vec![7, 8, 9]];
        assert!(bleu_n(&hyp, &reference, 2) < 1e-6);
    }

    #[test]
    fn bleu_matches_a_hand_computation() {
        // hyp "a b c", ref "a b d": unigram 2/3, bigram 1/2, same length
        let hyp = vec![vec![1, 2, 3]];
        let reference = vec![vec![1, 2, 4]];
        let by_hand = ((2.0_f64 / 3.0).ln() / 2.0 + (1.0_f64 / 2.0).ln() / 2.0).exp();
        assert!((bleu_n(&hyp, &reference, 2) - by_hand).abs() < 1e-6);
    }

    #[test]
    fn brevity_penalty_punishes_short_hypotheses() {
        // perfect prefix, half the length
        let hyp = vec![vec![1, 2]];
        let reference = vec![vec![1, 2, 3, 4]];
        let long_hyp = vec![vec![1, 2, 3, 4]];
        assert!(bleu_n(&hyp, &reference, 2) < bleu_n(&long_hyp, &reference, 2));
    }

    #[test]
    fn distinct_of_a_a_a_is_one_half() {
        let corpus = vec![vec![9, 9, 9]];
        assert!((distinct_n_corpus(&corpus, 2) - 0.5).abs() < 1e-12);
        assert!((distinct_n_sentence_mean(&corpus, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corpus_and_sentence_distinct_differ_on_repetition_across_sentences() {
        // each sentence is internally distinct but they repeat each other
        let corpus = vec![vec![1, 2, 3], vec![1, 2, 3]];
        assert!((distinct_n_sentence_mean(&corpus, 2) - 1.0).abs() < 1e-12);
        assert!((distinct_n_corpus(&corpus, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perplexity_of_the_uniform_model_is_vocab_size() {
        let vocab = 32.0_f64;
        let report = evaluate_dialogue(&[vec![1]], &[vec![1]], vocab.ln());
        assert!((report.ppl - vocab).abs() < 1e-9);
    }

    #[test]
    fn report_keys_are_stable() {
        let report = evaluate_dialogue(&[vec![1, 2]], &[vec![1, 2]], 0.5);
        let json = serde_json::to_string(&report).unwrap();
        for key in ["\"bleu2\"", "\"bleu3\"", "\"dist2\"", "\"dist3\"", "\"dist4\"", "\"ppl\""] {
            assert!(json.contains(key), "missing {key}");
        }
    }
}
