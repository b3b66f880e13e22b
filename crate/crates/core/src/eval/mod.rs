//! Multi-interest retrieval, the Recall/NDCG/HR suite, and training
//! diagnostics (batch HSIC curves and weight histograms).

mod export;
mod metrics;

pub use export::{write_curve_csv, write_histogram_csv, write_metrics_csv};
pub use metrics::{hr_at, ndcg_at, recall_at};

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::data::{eval_examples, Dataset, Split, TrainingExample};
use crate::error::{Error, Result};
use crate::hsic::{pairwise_hsic, InterestBatch, KernelConfig};
use crate::model::{interest_matrix, Hyperparams, ModelParams};
use crate::numerics::Matrix;

pub const DEFAULT_CUTOFFS: [usize; 2] = [20, 50];

/// Higher score first, lower item id on ties.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top `p` items for a context. Each interest row nominates its own top `p`
/// by inner product; the union is re-ranked by the best score any interest
/// gives an item. Context items are never recommended.
pub fn retrieve_top_p(params: &ModelParams, hp: &Hyperparams, context: &[usize], p: usize) -> Result<Vec<usize>> {
    if p > hp.vocab {
        return Err(Error::InvalidArgument(format!(
            "cannot retrieve {p} items from a vocabulary of {}",
            hp.vocab
        )));
    }
    let interests = interest_matrix(context, params, hp)?;
    let scores = interests.matmul_t(&params.item_emb)?;
    Ok(top_p_from_scores(&scores, context, p))
}

fn top_p_from_scores(scores: &Matrix, context: &[usize], p: usize) -> Vec<usize> {
    let excluded: BTreeSet<usize> = context.iter().copied().collect();
    let allowed: Vec<usize> = (0..scores.cols()).filter(|i| !excluded.contains(i)).collect();
    let take = p.min(allowed.len());
    if take == 0 {
        return Vec::new();
    }

    let mut nominated = BTreeSet::new();
    for j in 0..scores.rows() {
        let row = scores.row(j);
        let mut ranked: Vec<(usize, f64)> = allowed.iter().map(|&i| (i, row[i])).collect();
        if take < ranked.len() {
            ranked.select_nth_unstable_by(take - 1, rank_order);
            ranked.truncate(take);
        }
        nominated.extend(ranked.into_iter().map(|(i, _)| i));
    }

    let mut merged: Vec<(usize, f64)> = nominated
        .into_iter()
        .map(|i| {
            let best = (0..scores.rows()).map(|j| scores[(j, i)]).fold(f64::NEG_INFINITY, f64::max);
            (i, best)
        })
        .collect();
    merged.sort_by(rank_order);
    merged.truncate(take);
    merged.into_iter().map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub p: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// Mean metrics over the evaluated users of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: Split,
    pub cutoffs: Vec<CutoffMetrics>,
    pub n_users: usize,
    pub env: Option<String>,
}

impl MetricsReport {
    pub fn at(&self, p: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.p == p)
    }

    pub fn recall(&self, p: usize) -> f64 {
        self.at(p).map_or(0.0, |c| c.recall)
    }
}

/// Evaluates every user of `split`: prefix context, suffix ground truth.
/// Users with an empty ground truth are skipped.
pub fn evaluate(
    params: &ModelParams,
    hp: &Hyperparams,
    dataset: &Dataset,
    split: Split,
    cutoffs: &[usize],
) -> Result<MetricsReport> {
    let users: Vec<_> = dataset.users_in(split).map(|(_, s)| s).collect();
    if users.is_empty() {
        return Err(Error::Data(format!("split `{split}` has no users")));
    }
    let max_p = cutoffs.iter().copied().max().unwrap_or(0);
    let per_user: Vec<Option<Vec<[f64; 3]>>> = users
        .par_iter()
        .map(|seq| -> Result<Option<Vec<[f64; 3]>>> {
            let (context, truth) = eval_examples(seq, hp.max_len);
            if truth.is_empty() {
                return Ok(None);
            }
            let ranked = retrieve_top_p(params, hp, &context, max_p)?;
            Ok(Some(
                cutoffs
                    .iter()
                    .map(|&p| [recall_at(&ranked, &truth, p), ndcg_at(&ranked, &truth, p), hr_at(&ranked, &truth, p)])
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![[0.0f64; 3]; cutoffs.len()];
    let mut n = 0usize;
    for row in per_user.into_iter().flatten() {
        n += 1;
        for (acc, m) in sums.iter_mut().zip(row) {
            for k in 0..3 {
                acc[k] += m[k];
            }
        }
    }
    let denom = n.max(1) as f64;
    Ok(MetricsReport {
        split,
        cutoffs: cutoffs
            .iter()
            .zip(sums)
            .map(|(&p, s)| CutoffMetrics {
                p,
                recall: s[0] / denom,
                ndcg: s[1] / denom,
                hr: s[2] / denom,
            })
            .collect(),
        n_users: n,
        env: dataset.env_label(split),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    /// Unweighted Σ_{j<k} HSIC between interests over the batch.
    pub hsic: f64,
    pub recall50: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveLog {
    pub points: Vec<CurvePoint>,
}

impl CurveLog {
    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "curve step {} does not follow {}",
                    point.step, last.step
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    /// Attaches a validation recall to the most recent point.
    pub fn set_last_recall(&mut self, recall50: f64) {
        if let Some(last) = self.points.last_mut() {
            last.recall50 = Some(recall50);
        }
    }
}

/// Curve point for a batch under the given parameters. Sample weights play
/// no part in it.
pub fn log_curves(
    params: &ModelParams,
    hp: &Hyperparams,
    batch: &[TrainingExample],
    step: u64,
) -> Result<CurvePoint> {
    let interests = batch
        .iter()
        .map(|ex| interest_matrix(&ex.context, params, hp))
        .collect::<Result<Vec<_>>>()?;
    curve_point(&InterestBatch::new(interests)?, &hp.kernel, step)
}

pub fn curve_point(batch: &InterestBatch, kernel: &KernelConfig, step: u64) -> Result<CurvePoint> {
    Ok(CurvePoint {
        step,
        hsic: pairwise_hsic(batch, kernel)?,
        recall50: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed, values outside
/// are clamped into the edge bins.
pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}
