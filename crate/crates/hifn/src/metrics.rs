//! Classification and ranking metrics.
//!
//! AUC uses the rank-sum formulation with ties counted half; MRR, NDCG@k and
//! MAP operate on candidate lists sorted by descending score with stable
//! order on ties, averaged over lists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::RankingSample;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC needs both classes, got {positives} positives / {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores and labels have different lengths")]
    LengthMismatch,
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tied groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross-entropy of probabilistic scores; probabilities clamped
/// away from 0 and 1 so serialized scores cannot produce infinities.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let eps = 1e-12;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// One query-user candidate list with model scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedList {
    pub list_id: u64,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl RankedList {
    /// Candidate indices by descending score, stable on ties.
    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }

    fn first_relevant_rank(&self) -> Option<usize> {
        self.ranking()
            .iter()
            .position(|&idx| self.labels[idx] == 1)
            .map(|pos| pos + 1)
    }

    pub fn has_relevant(&self) -> bool {
        self.labels.iter().any(|&l| l == 1)
    }
}

/// Reciprocal rank of the first relevant candidate.
pub fn mrr(list: &RankedList) -> f64 {
    list.first_relevant_rank().map_or(0.0, |r| 1.0 / r as f64)
}

/// Binary-gain NDCG truncated at `k`, discount `1/log2(rank + 1)`.
pub fn ndcg_at(list: &RankedList, k: usize) -> f64 {
    let ranking = list.ranking();
    let n_relevant = list.labels.iter().filter(|&&l| l == 1).count();
    if n_relevant == 0 {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &idx)| list.labels[idx] == 1)
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..n_relevant.min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// Mean of precision@rank over the relevant positions.
pub fn average_precision(list: &RankedList) -> f64 {
    let ranking = list.ranking();
    let n_relevant = list.labels.iter().filter(|&&l| l == 1).count();
    if n_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut total = 0.0;
    for (pos, &idx) in ranking.iter().enumerate() {
        if list.labels[idx] == 1 {
            hits += 1;
            total += hits as f64 / (pos + 1) as f64;
        }
    }
    total / n_relevant as f64
}

/// Corpus-level ranking metrics: means over lists that contain a relevant
/// candidate; lists without one are skipped and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub ndcg_at_10: f64,
    pub map: f64,
    pub lists: usize,
    pub skipped_lists: usize,
}

pub fn ranking_report(lists: &[RankedList]) -> RankingReport {
    let mut report = RankingReport {
        mrr: 0.0,
        ndcg_at_10: 0.0,
        map: 0.0,
        lists: 0,
        skipped_lists: 0,
    };
    for list in lists {
        if !list.has_relevant() {
            report.skipped_lists += 1;
            continue;
        }
        report.mrr += mrr(list);
        report.ndcg_at_10 += ndcg_at(list, 10);
        report.map += average_precision(list);
        report.lists += 1;
    }
    if report.lists > 0 {
        let n = report.lists as f64;
        report.mrr /= n;
        report.ndcg_at_10 /= n;
        report.map /= n;
    }
    report
}

/// Groups scored samples into ranked lists by their `list_id` (file order
/// preserved inside each list).
pub fn lists_from_samples(samples: &[RankingSample], scores: &[f64]) -> Vec<RankedList> {
    let mut lists: Vec<RankedList> = Vec::new();
    let mut index: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    for (sample, &score) in samples.iter().zip(scores) {
        let slot = *index.entry(sample.list_id).or_insert_with(|| {
            lists.push(RankedList {
                list_id: sample.list_id,
                scores: Vec::new(),
                labels: Vec::new(),
            });
            lists.len() - 1
        });
        lists[slot].scores.push(score);
        lists[slot].labels.push(sample.label);
    }
    lists
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair-counting oracle.
    fn auc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_perfect_separation() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        assert_eq!(auc(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_is_error() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(MetricError::SingleClass { .. })
        ));
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for round in 0..100 {
            let n = rng.gen_range(5..200);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..20) as f64) / 20.0) // force ties
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_brute(&scores, &labels);
            assert!(
                (fast - slow).abs() < 1e-12,
                "round {round}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn logloss_hand_values() {
        // y_hat = 0.5 everywhere → ln 2
        let l = logloss(&[0.5, 0.5, 0.5], &[1, 0, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        // batch [(0.9,1),(0.1,0)] → −½(ln .9 + ln .9)
        let l = logloss(&[0.9, 0.1], &[1, 0]).unwrap();
        assert!((l - 0.10536051565782628).abs() < 1e-12);
        // perfect prediction limit
        let l = logloss(&[1.0 - 1e-13, 1e-13], &[1, 0]).unwrap();
        assert!(l < 1e-10);
    }

    fn single_positive_list(rank: usize, n: usize) -> RankedList {
        // candidate at position `rank-1` (descending by score) is relevant
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
        let mut labels = vec![0; n];
        labels[rank - 1] = 1;
        RankedList {
            list_id: 0,
            scores,
            labels,
        }
    }

    #[test]
    fn ranking_metrics_for_top_rank() {
        let list = single_positive_list(1, 11);
        assert_eq!(mrr(&list), 1.0);
        assert_eq!(ndcg_at(&list, 10), 1.0);
        assert_eq!(average_precision(&list), 1.0);
    }

    #[test]
    fn ranking_metrics_for_rank_three() {
        let list = single_positive_list(3, 11);
        assert!((mrr(&list) - 1.0 / 3.0).abs() < 1e-15);
        assert!((average_precision(&list) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_for_rank_two() {
        let list = single_positive_list(2, 11);
        let expected = 1.0 / 3f64.log2();
        assert!((ndcg_at(&list, 10) - expected).abs() < 1e-12);
        assert!((ndcg_at(&list, 10) - 0.6309297535714574).abs() < 1e-12);
    }

    #[test]
    fn single_relevant_makes_mrr_equal_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels = vec![0u8; n];
            labels[rng.gen_range(0..n)] = 1;
            let list = RankedList {
                list_id: 0,
                scores,
                labels,
            };
            assert!((mrr(&list) - average_precision(&list)).abs() < 1e-15);
            // with the relevant item at rank r ≤ k: ndcg = 1/log2(r+1)
            let r = list.first_relevant_rank().unwrap();
            if r <= 10 {
                let expected = 1.0 / ((r + 1) as f64).log2();
                assert!((ndcg_at(&list, 10) - expected).abs() < 1e-12);
            } else {
                assert_eq!(ndcg_at(&list, 10), 0.0);
            }
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_score_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
            let list = RankedList {
                list_id: 0,
                scores: scores.clone(),
                labels: labels.clone(),
            };
            // strictly monotone: x → exp(2x) + x
            let transformed = RankedList {
                list_id: 0,
                scores: scores.iter().map(|&s| (2.0 * s).exp() + s).collect(),
                labels,
            };
            assert!((mrr(&list) - mrr(&transformed)).abs() < 1e-15);
            assert!((ndcg_at(&list, 10) - ndcg_at(&transformed, 10)).abs() < 1e-15);
            assert!((average_precision(&list) - average_precision(&transformed)).abs() < 1e-15);
        }
    }

    #[test]
    fn report_skips_lists_without_relevant() {
        let good = single_positive_list(1, 3);
        let empty = RankedList {
            list_id: 1,
            scores: vec![0.5, 0.4],
            labels: vec![0, 0],
        };
        let report = ranking_report(&[good, empty]);
        assert_eq!(report.lists, 1);
        assert_eq!(report.skipped_lists, 1);
        assert_eq!(report.mrr, 1.0);
    }
}
