//! The multi-interest network.
//!
//! A context sequence is embedded as `E = V[items] + P[0..t]`, an attentive
//! extractor produces `A = softmax_rows(W2 · tanh(W1 · Eᵀ))` (each interest
//! attends over the `t` positions) and the interest matrix `M = A · E`. During
//! training the interest closest to the target embedding is selected and
//! scored against the target plus uniformly sampled negatives.
//!
//! Gradients are derived by hand. The selected index is a constant of the
//! forward pass, so no gradient flows through the argmax.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsic::KernelConfig;
use crate::numerics::{axpy, dot, glorot_uniform, log_sum_exp, softmax_in_place, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Item embedding size `d`.
    pub dim: usize,
    /// Attention hidden size `d̂`.
    pub attn_dim: usize,
    /// Number of interests `c`.
    pub interests: usize,
    /// Longest context fed to the extractor; older items are dropped.
    pub max_len: usize,
    pub vocab: usize,
    /// De-correlation importance.
    pub lambda: f64,
    pub negatives: usize,
    pub lr: f64,
    /// Step size of the sample-weight update. Per-sample HSIC gradients are
    /// tiny (each sample moves a batch statistic by O(1/m)), hence the scale.
    pub lr_weights: f64,
    pub weight_steps: usize,
    pub weight_bounds: (f64, f64),
    pub kernel: KernelConfig,
    pub batch_size: usize,
}

impl Hyperparams {
    pub fn new(vocab: usize) -> Self {
        Self {
            dim: 64,
            attn_dim: 256,
            interests: 2,
            max_len: 20,
            vocab,
            lambda: 1.0,
            negatives: 10,
            lr: 0.001,
            lr_weights: 1000.0,
            weight_steps: 1,
            weight_bounds: (0.0, 1.0),
            kernel: KernelConfig::default(),
            batch_size: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("dim", self.dim),
            ("attn_dim", self.attn_dim),
            ("interests", self.interests),
            ("max_len", self.max_len),
            ("vocab", self.vocab),
            ("batch_size", self.batch_size),
            ("weight_steps", self.weight_steps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.negatives == 0 || self.negatives >= self.vocab {
            return bad(format!(
                "negatives must lie in [1, vocab-1] = [1, {}], got {}",
                self.vocab.saturating_sub(1),
                self.negatives
            ));
        }
        if !(self.lr > 0.0) || !(self.lr_weights > 0.0) {
            return bad("learning rates must be positive".into());
        }
        let (lo, hi) = self.weight_bounds;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("weight bounds [{lo}, {hi}] are not an interval"));
        }
        self.kernel.validate()
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `vocab × d`
    pub item_emb: Matrix,
    /// `max_len × d`
    pub pos_emb: Matrix,
    /// `d̂ × d`
    pub w1: Matrix,
    /// `c × d̂`
    pub w2: Matrix,
}

impl ModelParams {
    /// Glorot-initializes every tensor, in the order item, position, W1, W2.
    pub fn init(hp: &Hyperparams, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            item_emb: glorot_uniform(hp.vocab, hp.dim, rng)?,
            pos_emb: glorot_uniform(hp.max_len, hp.dim, rng)?,
            w1: glorot_uniform(hp.attn_dim, hp.dim, rng)?,
            w2: glorot_uniform(hp.interests, hp.attn_dim, rng)?,
        })
    }

    pub fn zeros(hp: &Hyperparams) -> Self {
        Self {
            item_emb: Matrix::zeros(hp.vocab, hp.dim),
            pos_emb: Matrix::zeros(hp.max_len, hp.dim),
            w1: Matrix::zeros(hp.attn_dim, hp.dim),
            w2: Matrix::zeros(hp.interests, hp.attn_dim),
        }
    }

    pub fn check_shapes(&self, hp: &Hyperparams) -> Result<()> {
        let expect = [
            ("item_emb", &self.item_emb, (hp.vocab, hp.dim)),
            ("pos_emb", &self.pos_emb, (hp.max_len, hp.dim)),
            ("w1", &self.w1, (hp.attn_dim, hp.dim)),
            ("w2", &self.w2, (hp.interests, hp.attn_dim)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, hyperparameters need {:?}",
                    m.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("item_emb", &self.item_emb),
            ("pos_emb", &self.pos_emb),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Intermediates of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Context actually used (after truncation to `max_len`).
    pub items: Vec<usize>,
    /// `t × d`
    pub emb: Matrix,
    /// `tanh(W1 · Eᵀ)`, `d̂ × t`
    pub hidden: Matrix,
    /// `c × t`
    pub attn: Matrix,
    /// `c × d`
    pub interests: Matrix,
    pub selected: usize,
    pub target: usize,
    /// Target first, then the sampled negatives.
    pub candidates: Vec<usize>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// The selected interest row `R`.
    pub fn selected_repr(&self) -> &[f64] {
        self.interests.row(self.selected)
    }
}

/// `E[i] = V[items[i]] + P[i]` over the most recent `max_len` items.
pub fn embed_sequence(items: &[usize], params: &ModelParams, hp: &Hyperparams) -> Result<Matrix> {
    let items = truncate_context(items, hp.max_len)?;
    check_ids(items, hp.vocab)?;
    let mut emb = Matrix::zeros(items.len(), hp.dim);
    for (i, &item) in items.iter().enumerate() {
        let row = emb.row_mut(i);
        row.copy_from_slice(params.item_emb.row(item));
        axpy(1.0, params.pos_emb.row(i), row);
    }
    Ok(emb)
}

fn truncate_context(items: &[usize], max_len: usize) -> Result<&[usize]> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty context sequence".into()));
    }
    Ok(&items[items.len().saturating_sub(max_len)..])
}

fn check_ids(items: &[usize], vocab: usize) -> Result<()> {
    match items.iter().find(|&&i| i >= vocab) {
        Some(bad) => Err(Error::InvalidArgument(format!(
            "item id {bad} out of range for vocabulary of {vocab}"
        ))),
        None => Ok(()),
    }
}

/// Returns `(A, M)` for an embedded sequence.
pub fn extract_interests(emb: &Matrix, params: &ModelParams) -> Result<(Matrix, Matrix)> {
    let (_, attn, interests) = extract_with_hidden(emb, params)?;
    Ok((attn, interests))
}

fn extract_with_hidden(emb: &Matrix, params: &ModelParams) -> Result<(Matrix, Matrix, Matrix)> {
    if emb.cols() != params.w1.cols() {
        return Err(Error::Shape(format!(
            "embedding width {} does not match W1 width {}",
            emb.cols(),
            params.w1.cols()
        )));
    }
    let hidden = params.w1.matmul_t(emb)?.map(f64::tanh);
    let mut attn = params.w2.matmul(&hidden)?;
    for j in 0..attn.rows() {
        softmax_in_place(attn.row_mut(j));
    }
    let interests = attn.matmul(emb)?;
    Ok((hidden, attn, interests))
}

/// Interest matrix `M` for a context, as used at inference time.
pub fn interest_matrix(items: &[usize], params: &ModelParams, hp: &Hyperparams) -> Result<Matrix> {
    let emb = embed_sequence(items, params, hp)?;
    Ok(extract_interests(&emb, params)?.1)
}

/// Picks the interest row with the largest inner product against the target
/// embedding. Ties go to the lowest index.
pub fn select_interest(interests: &Matrix, target_emb: &[f64]) -> (usize, Vec<f64>) {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..interests.rows() {
        let s = dot(interests.row(j), target_emb);
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    (best, interests.row(best).to_vec())
}

/// `count` distinct items drawn uniformly from `0..vocab` without `target`.
pub fn sample_negatives(target: usize, vocab: usize, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if count == 0 || count > vocab.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {count} negatives from a vocabulary of {vocab}"
        )));
    }
    Ok(rng
        .sample_indices(vocab - 1, count)
        .into_iter()
        .map(|i| if i >= target { i + 1 } else { i })
        .collect())
}

/// Full forward pass with freshly sampled negatives.
pub fn forward(
    items: &[usize],
    target: usize,
    params: &ModelParams,
    hp: &Hyperparams,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    check_ids(&[target], hp.vocab)?;
    let negatives = sample_negatives(target, hp.vocab, hp.negatives, rng)?;
    forward_with_negatives(items, target, &negatives, params, hp)
}

/// Forward pass against a fixed negative set.
pub fn forward_with_negatives(
    items: &[usize],
    target: usize,
    negatives: &[usize],
    params: &ModelParams,
    hp: &Hyperparams,
) -> Result<ForwardTrace> {
    check_ids(&[target], hp.vocab)?;
    check_ids(negatives, hp.vocab)?;
    let emb = embed_sequence(items, params, hp)?;
    let (hidden, attn, interests) = extract_with_hidden(&emb, params)?;
    let (selected, _) = select_interest(&interests, params.item_emb.row(target));

    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(target);
    candidates.extend_from_slice(negatives);
    let repr = interests.row(selected);
    let logits = candidates
        .iter()
        .map(|&c| dot(repr, params.item_emb.row(c)))
        .collect();

    Ok(ForwardTrace {
        items: truncate_context(items, hp.max_len)?.to_vec(),
        emb,
        hidden,
        attn,
        interests,
        selected,
        target,
        candidates,
        logits,
    })
}

/// Softmax cross-entropy of the target over the candidate set.
pub fn sample_loss(trace: &ForwardTrace) -> f64 {
    log_sum_exp(&trace.logits) - trace.logits[0]
}

pub fn weighted_batch_loss(traces: &[ForwardTrace], weights: &[f64]) -> Result<f64> {
    check_weights(traces, weights)?;
    Ok(traces
        .iter()
        .zip(weights)
        .map(|(t, &w)| w * sample_loss(t))
        .sum())
}

fn check_weights(traces: &[ForwardTrace], weights: &[f64]) -> Result<()> {
    if traces.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} traces but {} weights",
            traces.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Gradients of the weighted loss. Item-embedding gradients are kept sparse
/// over the rows a batch touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub item_rows: BTreeMap<usize, Vec<f64>>,
    pub pos_emb: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Gradients {
    pub fn zeros(hp: &Hyperparams) -> Self {
        Self {
            item_rows: BTreeMap::new(),
            pos_emb: Matrix::zeros(hp.max_len, hp.dim),
            w1: Matrix::zeros(hp.attn_dim, hp.dim),
            w2: Matrix::zeros(hp.interests, hp.attn_dim),
        }
    }

    fn item_row(&mut self, item: usize, dim: usize) -> &mut [f64] {
        self.item_rows.entry(item).or_insert_with(|| vec![0.0; dim])
    }

    /// Accumulates `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (&item, row) in &other.item_rows {
            let dim = row.len();
            axpy(1.0, row, self.item_row(item, dim));
        }
        axpy(1.0, other.pos_emb.as_slice(), self.pos_emb.as_mut_slice());
        axpy(1.0, other.w1.as_slice(), self.w1.as_mut_slice());
        axpy(1.0, other.w2.as_slice(), self.w2.as_mut_slice());
    }

    pub fn dense_items(&self, vocab: usize, dim: usize) -> Matrix {
        let mut m = Matrix::zeros(vocab, dim);
        for (&item, row) in &self.item_rows {
            m.row_mut(item).copy_from_slice(row);
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.item_rows.values().flatten().all(|x| x.is_finite())
            && self.pos_emb.is_finite()
            && self.w1.is_finite()
            && self.w2.is_finite()
    }
}

/// Exact gradients of [`weighted_batch_loss`] with respect to every tensor.
/// Traces must come from a forward pass under the same `params`.
pub fn backward(
    traces: &[ForwardTrace],
    weights: &[f64],
    params: &ModelParams,
    hp: &Hyperparams,
) -> Result<Gradients> {
    check_weights(traces, weights)?;
    let mut grads = Gradients::zeros(hp);
    for (trace, &w) in traces.iter().zip(weights) {
        grads.accumulate(&backward_one(trace, w, params, hp));
    }
    Ok(grads)
}

/// Gradient contribution of a single weighted sample.
pub fn backward_one(trace: &ForwardTrace, weight: f64, params: &ModelParams, hp: &Hyperparams) -> Gradients {
    let d = hp.dim;
    let t = trace.items.len();
    let sel = trace.selected;
    let mut grads = Gradients::zeros(hp);
    if weight == 0.0 {
        return grads;
    }

    // Loss wrt logits: w · (softmax − onehot(target)).
    let mut dlogits = trace.logits.clone();
    softmax_in_place(&mut dlogits);
    dlogits[0] -= 1.0;
    dlogits.iter_mut().for_each(|g| *g *= weight);

    let repr = trace.selected_repr();
    let mut d_repr = vec![0.0; d];
    for (&cand, &g) in trace.candidates.iter().zip(&dlogits) {
        axpy(g, params.item_emb.row(cand), &mut d_repr);
        axpy(g, repr, grads.item_row(cand, d));
    }

    // Only row `sel` of M receives gradient, so only row `sel` of A and S do.
    let attn_row = trace.attn.row(sel);
    let mut d_emb = Matrix::zeros(t, d);
    let mut d_attn = vec![0.0; t];
    for i in 0..t {
        d_attn[i] = dot(&d_repr, trace.emb.row(i));
        axpy(attn_row[i], &d_repr, d_emb.row_mut(i));
    }
    let inner = dot(&d_attn, attn_row);
    let d_scores: Vec<f64> = (0..t).map(|i| attn_row[i] * (d_attn[i] - inner)).collect();

    let w2_row = params.w2.row(sel);
    let dw2_row = grads.w2.row_mut(sel);
    for (k, g) in dw2_row.iter_mut().enumerate() {
        *g = dot(trace.hidden.row(k), &d_scores);
    }

    // dZ = (W2[sel]ᵀ dS) ⊙ (1 − H²), shape d̂ × t.
    let mut d_pre = Matrix::zeros(hp.attn_dim, t);
    for k in 0..hp.attn_dim {
        let h = trace.hidden.row(k);
        let row = d_pre.row_mut(k);
        for i in 0..t {
            row[i] = w2_row[k] * d_scores[i] * (1.0 - h[i] * h[i]);
        }
    }
    // dW1 = dZ · E ; dE += dZᵀ · W1
    for k in 0..hp.attn_dim {
        let dz = d_pre.row(k);
        let dw1_row = grads.w1.row_mut(k);
        for i in 0..t {
            if dz[i] != 0.0 {
                axpy(dz[i], trace.emb.row(i), dw1_row);
            }
        }
        let w1_row = params.w1.row(k);
        for i in 0..t {
            if dz[i] != 0.0 {
                axpy(dz[i], w1_row, d_emb.row_mut(i));
            }
        }
    }

    for (i, &item) in trace.items.iter().enumerate() {
        axpy(1.0, d_emb.row(i), grads.item_row(item, d));
        axpy(1.0, d_emb.row(i), grads.pos_emb.row_mut(i));
    }
    grads
}
