//! Alternating optimization of model parameters and sample weights.
//!
//! Every batch first takes one Adam step on the sample-weighted next-item
//! loss, using the weights stored before the batch. The interests of the
//! same batch are then recomputed under the updated parameters and the batch
//! weights take projected gradient steps on the weighted correlation loss.
//! Validation Recall@50 drives early stopping; the best state is returned.

mod checkpoint;
mod weights;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use weights::WeightTable;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_training_example, Dataset, Split, TrainingExample};
use crate::error::{Error, Result};
use crate::eval::{curve_point, evaluate, CurveLog, CurvePoint};
use crate::hsic::{corr_loss_grad_weights, update_weights, InterestBatch};
use crate::model::{
    backward_one, forward_with_negatives, interest_matrix, sample_negatives, weighted_batch_loss, ForwardTrace,
    Gradients, Hyperparams, ModelParams,
};
use crate::numerics::{AdamState, Matrix, Rng, Stream};

/// Samples per gradient-reduction chunk. Fixed so that the summation order,
/// and therefore every bit of the result, is independent of the thread count.
const REDUCE_CHUNK: usize = 16;

/// Validation cutoff used for model selection.
pub const SELECTION_CUTOFF: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamAdam {
    pub item_emb: AdamState,
    pub pos_emb: AdamState,
    pub w1: AdamState,
    pub w2: AdamState,
}

impl ParamAdam {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            item_emb: AdamState::for_param(&params.item_emb),
            pos_emb: AdamState::for_param(&params.pos_emb),
            w1: AdamState::for_param(&params.w1),
            w2: AdamState::for_param(&params.w2),
        }
    }

    pub fn states(&self) -> [(&'static str, &AdamState); 4] {
        [
            ("item_emb", &self.item_emb),
            ("pos_emb", &self.pos_emb),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ]
    }
}

/// Bookkeeping of a run that is not a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub best_metric: Option<f64>,
    pub best_q: u64,
    /// `None` when early stopping is off.
    pub patience_left: Option<usize>,
    /// Early stopping has fired.
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: ParamAdam,
    pub weights: WeightTable,
    /// Batches processed so far.
    pub q: u64,
    pub negatives_rng: Rng,
    pub batches_rng: Rng,
    pub meta: RunMeta,
}

impl TrainState {
    pub fn rng_states(&self) -> [crate::numerics::RngState; 2] {
        [self.negatives_rng.state(), self.batches_rng.state()]
    }
}

/// Fresh state: Glorot-initialized parameters, every weight at 1.0.
pub fn init_state(hp: &Hyperparams, seed: u64) -> Result<TrainState> {
    hp.validate()?;
    let params = ModelParams::init(hp, &mut Rng::new(seed, Stream::Init))?;
    Ok(TrainState {
        adam: ParamAdam::new(&params),
        params,
        weights: WeightTable::new(),
        q: 0,
        negatives_rng: Rng::new(seed, Stream::Negatives),
        batches_rng: Rng::new(seed, Stream::Batches),
        meta: RunMeta {
            seed,
            epoch: 0,
            best_metric: None,
            best_q: 0,
            patience_left: None,
            finished: false,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Weighted loss the parameter update descended.
    pub loss: f64,
    pub weights_used: Vec<f64>,
    /// Batch weights after the de-correlation update.
    pub weights_new: Vec<f64>,
    pub curve: CurvePoint,
}

/// One alternating update on `batch`. With `decorrelate` off the weight
/// update is skipped entirely and the table is never written.
pub fn train_step(
    state: &mut TrainState,
    batch: &[TrainingExample],
    hp: &Hyperparams,
    decorrelate: bool,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let negatives = batch
        .iter()
        .map(|ex| sample_negatives(ex.target, hp.vocab, hp.negatives, &mut state.negatives_rng))
        .collect::<Result<Vec<_>>>()?;
    let traces = batch
        .par_iter()
        .zip(&negatives)
        .map(|(ex, negs)| forward_with_negatives(&ex.context, ex.target, negs, &state.params, hp))
        .collect::<Result<Vec<ForwardTrace>>>()?;

    let weights_used: Vec<f64> = batch.iter().map(|ex| state.weights.get(&ex.key)).collect();
    let loss = weighted_batch_loss(&traces, &weights_used)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss at batch {}", state.q + 1)));
    }
    let grads = reduce_gradients(&traces, &weights_used, &state.params, hp);
    apply_adam(state, &grads, hp)?;

    let interests = batch
        .par_iter()
        .map(|ex| interest_matrix(&ex.context, &state.params, hp))
        .collect::<Result<Vec<Matrix>>>()?;
    let interests = InterestBatch::new(interests)?;
    let curve = curve_point_or_zero(&interests, hp, state.q + 1)?;

    let weights_new = if !decorrelate {
        weights_used.clone()
    } else if batch.len() < 2 {
        warn!("batch of {} sample(s): skipping the weight update", batch.len());
        weights_used.clone()
    } else {
        let new = update_weights(
            &weights_used,
            |w| corr_loss_grad_weights(&interests, w, hp.lambda, &hp.kernel),
            hp.lr_weights,
            hp.weight_steps,
            hp.weight_bounds,
        )?;
        for (ex, &w) in batch.iter().zip(&new) {
            state.weights.set(ex.key, w);
        }
        new
    };

    state.q += 1;
    if !state.params.is_finite() {
        return Err(Error::Numerical(format!("non-finite parameters after batch {}", state.q)));
    }
    Ok(StepReport {
        loss,
        weights_used,
        weights_new,
        curve,
    })
}

fn curve_point_or_zero(interests: &InterestBatch, hp: &Hyperparams, step: u64) -> Result<CurvePoint> {
    if interests.len() < 2 {
        return Ok(CurvePoint {
            step,
            hsic: 0.0,
            recall50: None,
        });
    }
    curve_point(interests, &hp.kernel, step)
}

fn reduce_gradients(traces: &[ForwardTrace], weights: &[f64], params: &ModelParams, hp: &Hyperparams) -> Gradients {
    let partials: Vec<Gradients> = traces
        .par_chunks(REDUCE_CHUNK)
        .zip(weights.par_chunks(REDUCE_CHUNK))
        .map(|(ts, ws)| {
            let mut g = Gradients::zeros(hp);
            for (t, &w) in ts.iter().zip(ws) {
                g.accumulate(&backward_one(t, w, params, hp));
            }
            g
        })
        .collect();
    let mut total = Gradients::zeros(hp);
    for g in &partials {
        total.accumulate(g);
    }
    total
}

fn apply_adam(state: &mut TrainState, grads: &Gradients, hp: &Hyperparams) -> Result<()> {
    let items = grads.dense_items(hp.vocab, hp.dim);
    let p = &mut state.params;
    let a = &mut state.adam;
    a.item_emb.update(&mut p.item_emb, &items, hp.lr)?;
    a.pos_emb.update(&mut p.pos_emb, &grads.pos_emb, hp.lr)?;
    a.w1.update(&mut p.w1, &grads.w1, hp.lr)?;
    a.w2.update(&mut p.w2, &grads.w2, hp.lr)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Validate every this many batches; `None` validates once per epoch.
    pub eval_every: Option<u64>,
    /// Validations without improvement before stopping; `None` never stops early.
    pub patience: Option<usize>,
    pub max_epochs: u64,
    pub decorrelate: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            eval_every: None,
            patience: Some(3),
            max_epochs: 50,
            decorrelate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: CurveLog,
    /// `(q, validation Recall@50)` for every validation.
    pub validations: Vec<(u64, f64)>,
}

/// Trains from a fresh state.
pub fn fit(dataset: &Dataset, hp: &Hyperparams, seed: u64, opts: &TrainOptions) -> Result<FitResult> {
    let state = init_state(hp, seed)?;
    Trainer::new(dataset, hp, opts)?.run(state, None, |_, _| Ok(()))
}

/// Epoch loop over a dataset; owns nothing but references and options.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    hp: &'a Hyperparams,
    opts: &'a TrainOptions,
    train_users: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, hp: &'a Hyperparams, opts: &'a TrainOptions) -> Result<Self> {
        hp.validate()?;
        if dataset.vocab != hp.vocab {
            return Err(Error::Config(format!(
                "dataset has {} items but the model vocabulary is {}",
                dataset.vocab, hp.vocab
            )));
        }
        let train_users: Vec<usize> = dataset
            .users_in(Split::Train)
            .filter(|(_, s)| s.items.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if train_users.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if dataset.count(Split::Valid) == 0 {
            return Err(Error::Data("validation split is empty".into()));
        }
        Ok(Self {
            dataset,
            hp,
            opts,
            train_users,
        })
    }

    fn validate(&self, params: &ModelParams) -> Result<f64> {
        let report = evaluate(params, self.hp, self.dataset, Split::Valid, &[SELECTION_CUTOFF])?;
        Ok(report.recall(SELECTION_CUTOFF))
    }

    /// Continues `state` until early stopping or `max_epochs`. `best` is the
    /// best state recorded so far when resuming. `on_epoch` sees the current
    /// and best state after every completed epoch.
    pub fn run(
        &self,
        mut state: TrainState,
        best: Option<TrainState>,
        mut on_epoch: impl FnMut(&Checkpoint, &Checkpoint) -> Result<()>,
    ) -> Result<FitResult> {
        let hp = self.hp;
        let mut curve = CurveLog::default();
        let mut validations = Vec::new();
        let mut best = best.unwrap_or_else(|| state.clone());

        if state.meta.best_metric.is_none() {
            let recall = self.validate(&state.params)?;
            validations.push((state.q, recall));
            state.meta.best_metric = Some(recall);
            state.meta.best_q = state.q;
            state.meta.patience_left = self.opts.patience;
            best = state.clone();
        }

        while !state.meta.finished && state.meta.epoch < self.opts.max_epochs {
            let mut examples = self
                .train_users
                .iter()
                .map(|&u| make_training_example(&self.dataset.sequences[u], &mut state.batches_rng, hp.max_len))
                .collect::<Result<Vec<_>>>()?;
            state.batches_rng.shuffle(&mut examples);
            let n_batches = examples.len().div_ceil(hp.batch_size);

            for (b, batch) in examples.chunks(hp.batch_size).enumerate() {
                let report = train_step(&mut state, batch, hp, self.opts.decorrelate)?;
                curve.push(report.curve)?;
                let due = match self.opts.eval_every {
                    Some(k) => state.q % k.max(1) == 0,
                    None => b + 1 == n_batches,
                };
                if !due {
                    continue;
                }
                let recall = self.validate(&state.params)?;
                curve.set_last_recall(recall);
                validations.push((state.q, recall));
                if recall > state.meta.best_metric.unwrap_or(f64::NEG_INFINITY) {
                    state.meta.best_metric = Some(recall);
                    state.meta.best_q = state.q;
                    state.meta.patience_left = self.opts.patience;
                    best = state.clone();
                } else if let Some(left) = state.meta.patience_left.as_mut() {
                    *left = left.saturating_sub(1);
                    if *left == 0 {
                        state.meta.finished = true;
                        break;
                    }
                }
            }
            state.meta.epoch += 1;
            // The best snapshot carries the run's latest bookkeeping so either
            // file alone tells where the run stands.
            best.meta = state.meta.clone();
            on_epoch(
                &Checkpoint::new(hp.clone(), state.clone()),
                &Checkpoint::new(hp.clone(), best.clone()),
            )?;
        }
        best.meta = state.meta.clone();
        Ok(FitResult {
            best: Checkpoint::new(hp.clone(), best),
            last: Checkpoint::new(hp.clone(), state),
            curve,
            validations,
        })
    }
}
