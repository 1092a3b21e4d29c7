//! Top-k accuracy over ranked candidate lists: a prediction hits at k when
//! any of its first k candidate molecule sets equals the ground-truth set
//! (set equality of canonical, map-free SMILES).

use crate::beam::Prediction;
use std::collections::{BTreeMap, BTreeSet};

/// Standard report cutoffs.
pub const DEFAULT_KS: [usize; 6] = [1, 3, 5, 10, 20, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Number of (prediction, ground-truth) pairs scored.
    pub n: usize,
    /// Hit counts keyed by k.
    pub hits: BTreeMap<usize, usize>,
}

impl EvalReport {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        self.hits.get(&k).map(|&h| h as f64 / self.n as f64)
    }

    /// `k accuracy` lines in ascending k, fixed 4-decimal formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (&k, &h) in &self.hits {
            let acc = if self.n == 0 { 0.0 } else { h as f64 / self.n as f64 };
            out.push_str(&format!("top-{k} {:.4}\n", acc));
        }
        out
    }
}

/// Score aligned predictions against ground-truth molecule sets. The caller
/// aligns the two slices (same reaction at the same position); `ks` defaults
/// to [`DEFAULT_KS`] when empty.
pub fn top_k_accuracy(
    predictions: &[Prediction],
    truths: &[BTreeSet<String>],
    ks: &[usize],
) -> EvalReport {
    assert_eq!(
        predictions.len(),
        truths.len(),
        "predictions and ground truths must be aligned"
    );
    let ks: Vec<usize> = if ks.is_empty() { DEFAULT_KS.to_vec() } else { ks.to_vec() };
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (pred, truth) in predictions.iter().zip(truths) {
        // Rank of the first matching candidate (1-based), if any.
        let rank = pred
            .candidates
            .iter()
            .position(|c| &c.components == truth)
            .map(|i| i + 1);
        if let Some(r) = rank {
            for (&k, count) in hits.iter_mut() {
                if r <= k {
                    *count += 1;
                }
            }
        }
    }
    EvalReport { n: predictions.len(), hits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::Candidate;

    fn pred(sets: &[&[&str]]) -> Prediction {
        Prediction {
            candidates: sets
                .iter()
                .enumerate()
                .map(|(i, set)| Candidate {
                    components: set.iter().map(|s| s.to_string()).collect(),
                    score: -(i as f64),
                })
                .collect(),
            raw_count: sets.len(),
            dropped_invalid: 0,
        }
    }

    fn truth(set: &[&str]) -> BTreeSet<String> {
        set.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rank_one_hit_counts_for_every_k() {
        let report = top_k_accuracy(&[pred(&[&["CCO", "O"]])], &[truth(&["O", "CCO"])], &[]);
        for k in DEFAULT_KS {
            assert_eq!(report.accuracy(k), Some(1.0), "k = {k}");
        }
    }

    #[test]
    fn absent_truth_misses_for_every_k() {
        let report = top_k_accuracy(&[pred(&[&["CCO"], &["CCN"]])], &[truth(&["CCC"])], &[]);
        for k in DEFAULT_KS {
            assert_eq!(report.accuracy(k), Some(0.0));
        }
    }

    #[test]
    fn hits_are_non_decreasing_in_k() {
        // Truths sit at ranks 1, 3 and nowhere.
        let preds = vec![
            pred(&[&["A"], &["B"]]),
            pred(&[&["X"], &["Y"], &["B"]]),
            pred(&[&["X"]]),
        ];
        let truths = vec![truth(&["A"]), truth(&["B"]), truth(&["Z"])];
        let report = top_k_accuracy(&preds, &truths, &[1, 2, 3, 5]);
        let counts: Vec<usize> = report.hits.values().copied().collect();
        assert_eq!(counts, vec![1, 1, 2, 2]);
        assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn set_comparison_ignores_candidate_order_but_not_content() {
        let report = top_k_accuracy(
            &[pred(&[&["O", "CCO"]])],
            &[truth(&["CCO", "O", "N"])],
            &[1],
        );
        assert_eq!(report.accuracy(1), Some(0.0));
    }

    #[test]
    fn report_text_lists_each_k_with_fixed_precision() {
        let report = top_k_accuracy(&[pred(&[&["A"]])], &[truth(&["A"])], &[1, 3]);
        assert_eq!(report.to_text(), "top-1 1.0000\ntop-3 1.0000\n");
    }

    #[test]
    #[should_panic(expected = "aligned")]
    fn misaligned_inputs_panic() {
        top_k_accuracy(&[], &[truth(&["A"])], &[1]);
    }
}
