//! The two-phase training loop: cross-entropy warm-up followed by epochs
//! that blend cross-entropy with a rectified consistency penalty computed
//! over synthetic pseudo-labeled batches.
//!
//! Per meta-phase batch: build a neighbor index over current features, draw
//! `q` pseudo-label sets, take one virtual gradient step per set, score the
//! prediction drift `u` of each step by KL divergence, rectify the scores,
//! and descend the blend `(1 - alpha) * ce + alpha * mean(rectified)`.
//! Clean labels are never visible to this loop's gradients; they feed only
//! the metric recorder.

use std::cell::Cell;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy_node, kl_node, rectify_node, RectConfig, WeightingMode,
};
use crate::matrix::{one_hot, Matrix};
use crate::metrics::evaluate;
use crate::model::{features, init_params, probs_node, ModelSpec, ParamSet};
use crate::pseudo::{build_neighbor_index, generate_q_sets, PseudoLabelSet, DEFAULT_NEIGHBORS};
use crate::rng::{indexed_rng, stream_seed};
use crate::tape::{grad_through_step, GradOrder, GradResult, Tape};

/// Representation searched for nearest neighbors when pseudo-labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborSpace {
    /// Activations feeding the final layer (recomputed per batch).
    Penultimate,
    /// The raw input features.
    RawInput,
}

impl NeighborSpace {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "penultimate" => Ok(NeighborSpace::Penultimate),
            "input" => Ok(NeighborSpace::RawInput),
            other => Err(Error::InvalidConfig(format!(
                "unknown neighbor space '{}' (expected penultimate | input)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NeighborSpace::Penultimate => "penultimate",
            NeighborSpace::RawInput => "input",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the consistency penalty in the blended objective.
    pub alpha: f64,
    /// Step size of the virtual inner update.
    pub beta: f64,
    /// Outer learning rate before decay.
    pub lr: f64,
    /// Pseudo-label sets drawn per meta-phase batch.
    pub q: usize,
    /// Batch positions reassigned per pseudo-label set (clamped to the
    /// batch length for a short final batch).
    pub m: usize,
    pub batch_size: usize,
    /// Decay constant of the rectified penalty.
    pub c_shape: f64,
    pub weighting: WeightingMode,
    /// First epoch of the meta phase; earlier epochs train on pure
    /// cross-entropy.
    pub start_epoch: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate factor applied every
    /// `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub order: GradOrder,
    pub k_nn: usize,
    pub neighbor_space: NeighborSpace,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale defaults: batch 64, 120 epochs, lr 0.2 decayed by 10x
    /// every 40 epochs, momentum 0.9, weight decay 1e-4, 20 warm-up epochs,
    /// alpha 0.5, q = 10, m = 16 (a quarter of the batch), beta = lr.
    pub fn full_scale() -> Self {
        TrainConfig {
            alpha: 0.5,
            beta: 0.2,
            lr: 0.2,
            q: 10,
            m: 16,
            batch_size: 64,
            c_shape: 10.0,
            weighting: WeightingMode::Rectified,
            start_epoch: 20,
            epochs: 120,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 40,
            order: GradOrder::First,
            k_nn: DEFAULT_NEIGHBORS,
            neighbor_space: NeighborSpace::Penultimate,
            seed: 0,
        }
    }

    /// Minutes-scale profile with the same structure: batch 32, 30 epochs,
    /// decay every 10, 5 warm-up epochs.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            m: 8,
            epochs: 30,
            lr_decay_every: 10,
            start_epoch: 5,
            ..TrainConfig::full_scale()
        }
    }

    pub fn rect(&self) -> Result<RectConfig> {
        RectConfig::new(self.c_shape, self.weighting)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidConfig(format!("weight decay must be finite and >= 0, got {}", self.weight_decay)));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("lr decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig("lr decay period must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.start_epoch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "start_epoch {} exceeds total epochs {}",
                self.start_epoch, self.epochs
            )));
        }
        if self.m > self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "m = {} exceeds batch size {}",
                self.m, self.batch_size
            )));
        }
        if self.k_nn == 0 {
            return Err(Error::InvalidConfig("k_nn must be >= 1".into()));
        }
        if self.q == 0 && self.alpha > 0.0 {
            return Err(Error::InvalidConfig(
                "q = 0 with alpha > 0: the consistency penalty needs at least one pseudo-label set".into(),
            ));
        }
        self.rect()?;
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full_scale()
    }
}

/// Learning rate at a given (0-based) epoch under the step schedule.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32)
}

/// One momentum-SGD update in place: `g' = g + wd * p; v = mu * v + g';
/// p -= lr * v`.
pub fn sgd_update(
    params: &mut ParamSet,
    velocity: &mut [Matrix],
    grads: &[Matrix],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in params.mats_mut().iter_mut().zip(velocity).zip(grads) {
        for i in 0..g.len() {
            let gp = g.data()[i] + weight_decay * p.data()[i];
            let vi = momentum * v.data()[i] + gp;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * vi;
        }
    }
}

/// Gradient of batch cross-entropy with respect to every parameter.
pub fn ce_batch_grad(params: &ParamSet, x: &Matrix, y: &Matrix) -> Result<GradResult> {
    let mut tape = Tape::new();
    let ids = params.declare(&mut tape);
    let xid = tape.input(x.clone());
    let probs = probs_node(&mut tape, &ids, xid)?;
    let yid = tape.input(y.clone());
    let loss = cross_entropy_node(&mut tape, probs, yid)?;
    tape.backward(loss)
}

/// Everything one blended batch step produces.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub grads: Vec<Matrix>,
    pub ce: f64,
    /// Mean rectified penalty over the pseudo-label sets (0 when none ran).
    pub meta: f64,
    pub total: f64,
    /// Mean raw consistency score over the sets.
    pub mean_u: f64,
}

/// The blended objective for one batch, with no shortcuts: both branches
/// are always evaluated, so `alpha = 0` exercises the full formula
/// `(1 - alpha) * ce + alpha * meta`.
///
/// For each pseudo-label set the inner tape records cross-entropy against
/// the pseudo labels, the virtual update `phi = theta - beta * grad` is
/// taken, and the outer tape scores the KL divergence of the pre-step
/// predictions from the post-step predictions, rectified per the config.
pub fn objective_grad(
    params: &ParamSet,
    x: &Matrix,
    y: &Matrix,
    sets: &[PseudoLabelSet],
    cfg: &TrainConfig,
) -> Result<BatchResult> {
    if sets.is_empty() {
        return Err(Error::InvalidConfig("objective_grad needs at least one pseudo-label set".into()));
    }
    let rect = cfg.rect()?;
    let ce = ce_batch_grad(params, x, y)?;

    let mut meta_grads: Vec<Matrix> = params.mats().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut s_sum = 0.0;
    let mut u_sum = 0.0;
    for set in sets {
        let u_cell = Cell::new(f64::NAN);
        let res = grad_through_step(
            params.mats(),
            cfg.beta,
            cfg.order,
            |tape, theta| {
                let xid = tape.input(x.clone());
                let probs = probs_node(tape, theta, xid)?;
                let yid = tape.input(set.labels.clone());
                cross_entropy_node(tape, probs, yid)
            },
            |tape, theta, phi| {
                let xo = tape.input(x.clone());
                let p_o = probs_node(tape, theta, xo)?;
                let xi = tape.input(x.clone());
                let p_i = probs_node(tape, phi, xi)?;
                let u = kl_node(tape, p_o, p_i)?;
                u_cell.set(tape.scalar(u)?);
                rectify_node(tape, u, &rect)
            },
        )?;
        s_sum += res.loss;
        u_sum += u_cell.get();
        for (acc, g) in meta_grads.iter_mut().zip(&res.grads) {
            acc.axpy(1.0, g);
        }
    }
    let q = sets.len() as f64;
    let meta = s_sum / q;
    let mean_u = u_sum / q;
    let grads = ce
        .grads
        .iter()
        .zip(&meta_grads)
        .map(|(gc, gm)| {
            let mut g = gc.scale(1.0 - cfg.alpha);
            g.axpy(cfg.alpha / q, gm);
            g
        })
        .collect();
    Ok(BatchResult { grads, ce: ce.loss, meta, total: (1.0 - cfg.alpha) * ce.loss + cfg.alpha * meta, mean_u })
}

/// The blended objective value alone (no outer gradient); the virtual inner
/// steps are still taken. Useful for direct checks of the training loss.
pub fn objective_value(
    params: &ParamSet,
    x: &Matrix,
    y: &Matrix,
    sets: &[PseudoLabelSet],
    cfg: &TrainConfig,
) -> Result<f64> {
    Ok(objective_grad(params, x, y, sets, cfg)?.total)
}

/// One epoch-level metric record. `wall_time_s` is the only
/// non-deterministic column and is written last.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub ce_loss: f64,
    pub meta_loss: f64,
    pub total_loss: f64,
    pub val_accuracy: f64,
    pub label_correction_accuracy: f64,
    pub mean_u: f64,
    pub mean_s: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,ce_loss,meta_loss,total_loss,val_accuracy,label_correction_accuracy,mean_u,mean_s,wall_time_s";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.6},{:.6},{:.9},{:.9},{:.3}\n",
            r.epoch,
            r.ce_loss,
            r.meta_loss,
            r.total_loss,
            r.val_accuracy,
            r.label_correction_accuracy,
            r.mean_u,
            r.mean_s,
            r.wall_time_s
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamSet,
    pub velocity: Vec<Matrix>,
    /// Parameters as of the end of the warm-up phase.
    pub warmup_params: ParamSet,
    pub history: Vec<MetricRow>,
}

/// Runs the full two-phase loop and returns the final state. Training reads
/// `train_ds.training_labels()` (noisy when present); the clean labels of
/// both splits feed only the recorded metrics.
pub fn train(spec: &ModelSpec, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    spec.validate()?;
    if spec.input_dim != train_ds.dim() || spec.classes != train_ds.classes {
        return Err(Error::InvalidConfig(format!(
            "model is {}-in {}-class but training data is {}-in {}-class",
            spec.input_dim,
            spec.classes,
            train_ds.dim(),
            train_ds.classes
        )));
    }
    if val_ds.dim() != train_ds.dim() || val_ds.classes != train_ds.classes {
        return Err(Error::InvalidData("validation split does not match training split".into()));
    }

    let mut params = init_params(spec, stream_seed(cfg.seed, "init"))?;
    let mut velocity: Vec<Matrix> = params.mats().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut warmup_params = params.clone();
    let labels = train_ds.training_labels().to_vec();
    let n = train_ds.len();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_at(cfg, epoch);
        let meta_phase = epoch >= cfg.start_epoch && cfg.alpha > 0.0 && cfg.q > 0;

        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut indexed_rng(cfg.seed, "shuffle", epoch as u64));
        let mut pseudo_rng = indexed_rng(cfg.seed, "pseudo", epoch as u64);

        let mut ce_sum = 0.0;
        let mut total_sum = 0.0;
        let mut batches = 0usize;
        let mut meta_sum = 0.0;
        let mut u_sum = 0.0;
        let mut meta_batches = 0usize;

        for chunk in idx.chunks(cfg.batch_size) {
            let k = chunk.len();
            let mut x = Matrix::zeros(k, train_ds.dim());
            for (r, &i) in chunk.iter().enumerate() {
                for c in 0..train_ds.dim() {
                    x.set(r, c, train_ds.features.get(i, c));
                }
            }
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let y = one_hot(&batch_labels, train_ds.classes)?;

            // A single-row batch cannot support neighbor search; it trains
            // on cross-entropy alone.
            let res = if meta_phase && k >= 2 {
                let space = match cfg.neighbor_space {
                    NeighborSpace::Penultimate => features(&params, &x)?,
                    NeighborSpace::RawInput => x.clone(),
                };
                let index = build_neighbor_index(&space, cfg.k_nn)?;
                let sets = generate_q_sets(&y, &index, cfg.m.min(k), cfg.q, &mut pseudo_rng)?;
                let r = objective_grad(&params, &x, &y, &sets, cfg)?;
                meta_sum += r.meta;
                u_sum += r.mean_u;
                meta_batches += 1;
                r
            } else {
                let g = ce_batch_grad(&params, &x, &y)?;
                BatchResult { total: g.loss, ce: g.loss, meta: 0.0, mean_u: 0.0, grads: g.grads }
            };
            ce_sum += res.ce;
            total_sum += res.total;
            batches += 1;
            sgd_update(&mut params, &mut velocity, &res.grads, lr, cfg.momentum, cfg.weight_decay);
        }
        for m in params.mats() {
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("parameters diverged at epoch {}", epoch)));
            }
        }

        if epoch + 1 == cfg.start_epoch {
            warmup_params = params.clone();
        }

        let val_report = evaluate(&params, val_ds)?;
        let train_report = evaluate(&params, train_ds)?;
        let mb = meta_batches.max(1) as f64;
        history.push(MetricRow {
            epoch,
            ce_loss: ce_sum / batches as f64,
            meta_loss: meta_sum / mb,
            total_loss: total_sum / batches as f64,
            val_accuracy: val_report.accuracy,
            label_correction_accuracy: train_report.accuracy,
            mean_u: u_sum / mb,
            mean_s: meta_sum / mb,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainState { params, velocity, warmup_params, history })
}
