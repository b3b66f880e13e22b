//! Top-p ranking metrics for one user. `truth` is the held-out item set;
//! `recommended` is ranked best first.

use std::collections::BTreeSet;

fn hits(recommended: &[usize], truth: &BTreeSet<usize>, p: usize) -> usize {
    recommended.iter().take(p).filter(|i| truth.contains(i)).count()
}

/// Fraction of the truth set found in the top `p`. Zero for an empty truth set.
pub fn recall_at(recommended: &[usize], truth: &BTreeSet<usize>, p: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    hits(recommended, truth, p) as f64 / truth.len() as f64
}

/// Binary-relevance NDCG with `1/log2(rank + 1)` gains, ideal DCG over
/// `min(p, |truth|)` hits.
pub fn ndcg_at(recommended: &[usize], truth: &BTreeSet<usize>, p: usize) -> f64 {
    let ideal_hits = p.min(truth.len());
    if ideal_hits == 0 {
        return 0.0;
    }
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = recommended
        .iter()
        .take(p)
        .enumerate()
        .filter(|(_, i)| truth.contains(i))
        .map(|(r, _)| gain(r + 1))
        .sum();
    let idcg: f64 = (1..=ideal_hits).map(gain).sum();
    dcg / idcg
}

/// 1 if any truth item appears in the top `p`.
pub fn hr_at(recommended: &[usize], truth: &BTreeSet<usize>, p: usize) -> f64 {
    if hits(recommended, truth, p) > 0 {
        1.0
    } else {
        0.0
    }
}
