//! Losses, regularizers, Adagrad and the epoch loop.
//!
//! The objective for a minibatch of (reciprocal-augmented) facts is
//!
//! ```text
//! L = L_c + λ_e · Ω + λ_τ · Λ
//! ```
//!
//! with `L_c` the mean full-softmax cross-entropy over candidate tails, `Ω`
//! the mean per-fact `‖q_h‖_p^p + ‖q'_r(τ)‖_p^p + ‖q_t‖_p^p`, and `Λ` the
//! smoothness penalty over adjacent timestamps, computed once per step over
//! the whole time tables.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{linalg::general_mat_mul, s, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{batch_iterator, load_any, FilterIndex, Quadruple, QuadrupleDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RankingResult};
use crate::exec::{with_threads, Exec};
use crate::model::{query_backward, query_forward, scores_against_entities, Gradients, ModelParams, Table, ROW_CHUNK};
use crate::quat::QuaternionBatch;

pub const ADAGRAD_EPS: f64 = 1e-10;

/// Squared-gradient accumulators, one per parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub entity: QuaternionBatch,
    pub relation: QuaternionBatch,
    pub rot_time: QuaternionBatch,
    pub periodic_time: QuaternionBatch,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(params: &ModelParams) -> Self {
        let z = |t: &QuaternionBatch| QuaternionBatch::zeros(t.rows(), t.dim());
        Self {
            entity: z(&params.entity),
            relation: z(&params.relation),
            rot_time: z(&params.rot_time),
            periodic_time: z(&params.periodic_time),
            epsilon: ADAGRAD_EPS,
        }
    }

    pub fn table(&self, t: Table) -> &QuaternionBatch {
        match t {
            Table::Entity => &self.entity,
            Table::Relation => &self.relation,
            Table::RotTime => &self.rot_time,
            Table::PeriodicTime => &self.periodic_time,
        }
    }

    pub fn table_mut(&mut self, t: Table) -> &mut QuaternionBatch {
        match t {
            Table::Entity => &mut self.entity,
            Table::Relation => &mut self.relation,
            Table::RotTime => &mut self.rot_time,
            Table::PeriodicTime => &mut self.periodic_time,
        }
    }
}

/// One Adagrad update on the rows present in `grads`:
/// `acc += g²; θ -= lr · g / (√acc + ε)`.
pub fn adagrad_step(params: &mut ModelParams, state: &mut AdagradState, grads: &Gradients, lr: f64) {
    let eps = state.epsilon;
    let dim = params.dim();
    for t in Table::ALL {
        let g = grads.table(t);
        let theta = params.table_mut(t);
        let acc = state.table_mut(t);
        for (row, vals) in g.iter() {
            let row = row as usize;
            for (c, (p, a)) in theta.components_mut().into_iter().zip(acc.components_mut()).enumerate() {
                let mut prow = p.row_mut(row);
                let mut arow = a.row_mut(row);
                for (k, &gk) in vals[c * dim..(c + 1) * dim].iter().enumerate() {
                    arow[k] += gk * gk;
                    prow[k] -= lr * gk / (arow[k].sqrt() + eps);
                }
            }
        }
    }
}

#[inline]
fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 4.0 {
        let x2 = x * x;
        x2 * x2
    } else {
        x.abs().powf(p)
    }
}

/// Derivative of `|x|^p`.
#[inline]
fn abs_pow_grad(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if p == 4.0 {
        4.0 * x * x * x
    } else {
        p * x.signum() * x.abs().powf(p - 1.0)
    }
}

/// Mean cross-entropy and the gradients with respect to the entity table
/// (dense) and the query embeddings.
fn classification_parts(
    params: &ModelParams,
    batch: &[Quadruple],
    query: &QuaternionBatch,
    exec: Exec,
) -> (f64, QuaternionBatch, QuaternionBatch) {
    let b = batch.len();
    let n_e = params.num_entities();
    let mut g_scores: Array2<f64> = scores_against_entities(params, query, exec);
    let inv_b = 1.0 / b as f64;

    // softmax(s) - onehot(gold), scaled by 1/B; row losses collected in order
    let mut losses = vec![0.0; b];
    {
        let mut view = g_scores.view_mut();
        let loss_rows: Vec<(usize, f64)> = {
            let out = std::sync::Mutex::new(Vec::with_capacity(b));
            exec.for_each_row_chunk(&mut view, ROW_CHUNK, |start, mut block| {
                let mut local = Vec::with_capacity(block.nrows());
                for (i, mut row) in block.rows_mut().into_iter().enumerate() {
                    let gold = batch[start + i].tail as usize;
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let gold_shifted = row[gold] - max;
                    let mut sum = 0.0;
                    row.mapv_inplace(|s| {
                        let e = (s - max).exp();
                        sum += e;
                        e
                    });
                    local.push((start + i, sum.ln() - gold_shifted));
                    let norm = inv_b / sum;
                    row.mapv_inplace(|e| e * norm);
                    row[gold] -= inv_b;
                }
                out.lock().unwrap().extend(local);
            });
            out.into_inner().unwrap()
        };
        for (i, l) in loss_rows {
            losses[i] = l;
        }
    }
    let loss = losses.iter().sum::<f64>() * inv_b;

    let dim = params.dim();
    let mut g_entity = QuaternionBatch::zeros(n_e, dim);
    for (ge, qc) in g_entity.components_mut().into_iter().zip(query.components()) {
        exec.for_each_row_chunk(&mut ge.view_mut(), ROW_CHUNK, |start, mut block| {
            let cols = start..start + block.nrows();
            general_mat_mul(1.0, &g_scores.slice(s![.., cols]).t(), qc, 0.0, &mut block);
        });
    }
    let mut g_query = QuaternionBatch::zeros(b, dim);
    for (gq, ec) in g_query.components_mut().into_iter().zip(params.entity.components()) {
        exec.for_each_row_chunk(&mut gq.view_mut(), ROW_CHUNK, |start, mut block| {
            let rows = start..start + block.nrows();
            general_mat_mul(1.0, &g_scores.slice(s![rows, ..]), ec, 0.0, &mut block);
        });
    }
    (loss, g_entity, g_query)
}

/// Ω for the batch, with `weight · ∂Ω` added to the head/tail rows in `grads`
/// and returned for the relation embeddings.
fn embedding_parts(
    params: &ModelParams,
    batch: &[Quadruple],
    relation: &QuaternionBatch,
    p: f64,
    weight: f64,
    grads: &mut Gradients,
) -> (f64, QuaternionBatch) {
    let dim = params.dim();
    let inv_b = 1.0 / batch.len() as f64;
    let scale = weight * inv_b;
    let mut value = 0.0;
    let mut g_rel = QuaternionBatch::zeros(batch.len(), dim);
    for (i, q) in batch.iter().enumerate() {
        let h_slot = grads.entity.slot(q.head);
        let t_slot = grads.entity.slot(q.tail);
        for k in 0..dim {
            let h = params.entity.get(q.head as usize, k);
            let t = params.entity.get(q.tail as usize, k);
            let r = relation.get(i, k);
            value += h.iter().chain(&t).chain(&r).map(|&x| abs_pow(x, p)).sum::<f64>();
            grads.entity.add_quat(h_slot, k, h.map(|x| scale * abs_pow_grad(x, p)));
            grads.entity.add_quat(t_slot, k, t.map(|x| scale * abs_pow_grad(x, p)));
            g_rel.set(i, k, r.map(|x| scale * abs_pow_grad(x, p)));
        }
    }
    (value * inv_b, g_rel)
}

/// Multi-class log-loss `mean_i −log softmax(φ(h_i, r_i, ·, τ_i))[t_i]`.
pub fn multiclass_log_loss(params: &ModelParams, batch: &[Quadruple], exec: Exec) -> (f64, Gradients) {
    let (relation, query) = query_forward(params, batch);
    let (loss, g_entity, g_query) = classification_parts(params, batch, &query, exec);
    let mut grads = Gradients::new(params.dim());
    grads.entity.add_dense(&g_entity);
    query_backward(params, batch, &relation, &g_query, None, &mut grads);
    (loss, grads)
}

/// Embedding regularizer Ω over the batch, averaged per fact.
pub fn embedding_regularizer(params: &ModelParams, batch: &[Quadruple], p: f64) -> (f64, Gradients) {
    let (relation, _) = query_forward(params, batch);
    let mut grads = Gradients::new(params.dim());
    let (value, g_rel) = embedding_parts(params, batch, &relation, p, 1.0, &mut grads);
    let zero = QuaternionBatch::zeros(batch.len(), params.dim());
    query_backward(params, batch, &relation, &zero, Some(&g_rel), &mut grads);
    (value, grads)
}

/// Periodic temporal regularizer Λ over the stored (unnormalized) time
/// tables: the mean over adjacent pairs of
/// `‖q_τ(i+1) − q_τ(i) + q_τ'(i+1) − q_τ'(i)‖_p^p`. Without periodic time the
/// `q_τ'` terms are dropped.
pub fn temporal_regularizer(params: &ModelParams, p: f64) -> (f64, Gradients) {
    let dim = params.dim();
    let n_t = params.num_timestamps();
    let mut grads = Gradients::new(dim);
    if n_t < 2 {
        return (0.0, grads);
    }
    let inv = 1.0 / (n_t - 1) as f64;
    let mut value = 0.0;
    for i in 0..n_t - 1 {
        let (lo_r, hi_r) = (grads.rot_time.slot(i as u32), grads.rot_time.slot(i as u32 + 1));
        let per_slots = params
            .periodic_enabled
            .then(|| (grads.periodic_time.slot(i as u32), grads.periodic_time.slot(i as u32 + 1)));
        for k in 0..dim {
            let (a, b) = (params.rot_time.get(i, k), params.rot_time.get(i + 1, k));
            let mut diff = [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]];
            if params.periodic_enabled {
                let (pa, pb) = (params.periodic_time.get(i, k), params.periodic_time.get(i + 1, k));
                for c in 0..4 {
                    diff[c] += pb[c] - pa[c];
                }
            }
            value += diff.iter().map(|&x| abs_pow(x, p)).sum::<f64>();
            let g = diff.map(|x| inv * abs_pow_grad(x, p));
            let neg = g.map(|x| -x);
            grads.rot_time.add_quat(hi_r, k, g);
            grads.rot_time.add_quat(lo_r, k, neg);
            if let Some((lo_p, hi_p)) = per_slots {
                grads.periodic_time.add_quat(hi_p, k, g);
                grads.periodic_time.add_quat(lo_p, k, neg);
            }
        }
    }
    (value * inv, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_e: f64,
    pub lambda_t: f64,
    pub p: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda_e: c.lambda_e,
            lambda_t: c.lambda_t,
            p: c.p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub classification: f64,
    pub embedding: f64,
    pub temporal: f64,
    pub total: f64,
}

/// `L = L_c + λ_e·Ω + λ_τ·Λ` and its gradients, sharing one forward pass.
pub fn total_loss(params: &ModelParams, batch: &[Quadruple], w: LossWeights, exec: Exec) -> (LossParts, Gradients) {
    let (relation, query) = query_forward(params, batch);
    let (classification, g_entity, g_query) = classification_parts(params, batch, &query, exec);
    let mut grads = Gradients::new(params.dim());
    grads.entity.add_dense(&g_entity);
    let (embedding, g_rel) = if w.lambda_e > 0.0 {
        let (v, g) = embedding_parts(params, batch, &relation, w.p, w.lambda_e, &mut grads);
        (v, Some(g))
    } else {
        (embedding_parts(params, batch, &relation, w.p, 0.0, &mut Gradients::new(params.dim())).0, None)
    };
    query_backward(params, batch, &relation, &g_query, g_rel.as_ref(), &mut grads);
    let (temporal, mut g_time) = temporal_regularizer(params, w.p);
    if w.lambda_t > 0.0 {
        g_time.scale(w.lambda_t);
        grads.merge(&g_time);
    }
    let parts = LossParts {
        classification,
        embedding,
        temporal,
        total: classification + w.lambda_e * embedding + w.lambda_t * temporal,
    };
    (parts, grads)
}

/// Mean `L_c` over a whole fact list, in fixed-size batches.
pub fn mean_classification_loss(params: &ModelParams, facts: &[Quadruple], exec: Exec) -> f64 {
    let mut total = 0.0;
    for chunk in facts.chunks(512) {
        let (_, query) = query_forward(params, chunk);
        let (loss, _, _) = classification_parts(params, chunk, &query, exec);
        total += loss * chunk.len() as f64;
    }
    total / facts.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub valid: Option<RankingResult>,
    pub seconds: f64,
}

impl EpochRecord {
    /// Metrics-log line: epoch, train loss, valid MRR/Hits@1/3/10, seconds.
    pub fn log_line(&self) -> String {
        let (mrr, h1, h3, h10) = self
            .valid
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |v| (v.mrr, v.hits[0], v.hits[1], v.hits[2]));
        format!(
            "epoch={}\tloss={:.6}\tmrr={}\thits@1={}\thits@3={}\thits@10={}\tseconds={:.3}",
            self.epoch, self.train_loss, mrr, h1, h3, h10, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adagrad: AdagradState,
    pub history: Vec<EpochRecord>,
    /// Epoch and validation result of the best-MRR model, if validation ran.
    pub best: Option<(usize, RankingResult)>,
    pub best_params: Option<ModelParams>,
}

/// Path of the best-validation checkpoint written next to `checkpoint`.
pub fn best_checkpoint_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".best");
    PathBuf::from(s)
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given".into()))?;
    let (_, ds) = load_any(path)?;
    train_on(cfg, &ds)
}

/// Trains on an in-memory dataset. All randomness (initialization and epoch
/// order) comes from one generator seeded with `cfg.seed`.
pub fn train_on(cfg: &TrainConfig, ds: &QuadrupleDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    with_threads(cfg.threads, || train_inner(cfg, ds))
}

fn train_inner(cfg: &TrainConfig, ds: &QuadrupleDataset) -> Result<TrainOutcome> {
    let exec = Exec::for_threads(cfg.threads);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init_with_rng(
        ds.num_entities,
        ds.num_relations,
        ds.num_timestamps,
        cfg.dim,
        cfg.periodic_enabled,
        cfg.seed,
        &mut rng,
    );
    let mut adagrad = AdagradState::new(&params);
    let weights = LossWeights::from(cfg);
    let filter = (cfg.eval_every > 0 && !ds.valid.is_empty()).then(|| FilterIndex::build(ds));
    let mut log = match &cfg.metrics_log {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    let start = Instant::now();
    let mut history = Vec::new();
    let mut best: Option<(usize, RankingResult)> = None;
    let mut best_params = None;
    for epoch in 1..=cfg.max_epochs {
        let order_seed = rng.next_u64();
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in batch_iterator(ds, cfg.batch_size, order_seed) {
            let (parts, grads) = total_loss(&params, &batch, weights, exec);
            if !parts.total.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: parts.total,
                });
            }
            adagrad_step(&mut params, &mut adagrad, &grads, cfg.learning_rate);
            loss_sum += parts.total * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = loss_sum / count.max(1) as f64;

        let validate = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs);
        let valid = match (&filter, validate) {
            (Some(f), true) => Some(evaluate(&params, &ds.valid, f, exec)),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            valid,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(v) = &record.valid {
            if let Some(log) = log.as_mut() {
                writeln!(log, "{}", record.log_line())?;
            }
            if best.as_ref().is_none_or(|(_, b)| v.mrr > b.mrr) {
                best = Some((epoch, v.clone()));
                best_params = Some(params.clone());
            }
        }
        history.push(record);
    }

    if let Some(path) = &cfg.checkpoint {
        Checkpoint::new(params.clone(), adagrad.clone()).save(path)?;
        if let Some(bp) = &best_params {
            Checkpoint::new(bp.clone(), AdagradState::new(bp)).save(best_checkpoint_path(path))?;
        }
    }
    Ok(TrainOutcome {
        params,
        adagrad,
        history,
        best,
        best_params,
    })
}

/// Trains with periodic time disabled and evaluates on the test split.
pub fn ablation_eval(cfg: &TrainConfig, ds: &QuadrupleDataset) -> Result<RankingResult> {
    let cfg = TrainConfig {
        periodic_enabled: false,
        ..cfg.clone()
    };
    let out = train_on(&cfg, ds)?;
    let filter = FilterIndex::build(ds);
    Ok(with_threads(cfg.threads, || {
        evaluate(&out.params, &ds.test, &filter, Exec::for_threads(cfg.threads))
    }))
}
