//! Training losses and the rectification weighting.
//!
//! Each loss exists as a plain evaluation over matrices and as a tape
//! builder; the two share the same formulas and clamps and a test pins them
//! equal. Probabilities are clamped to `[1e-12, 1]` inside every logarithm
//! so a collapsed softmax cannot produce infinities.
//!
//! Normalization convention: cross-entropy and the KL consistency score are
//! both means over the batch rows, so loss magnitudes are comparable across
//! batch sizes and the two terms of the blended objective live on the same
//! scale.

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::tape::{NodeId, Tape};

pub const PROB_FLOOR: f64 = 1e-12;
pub const PROB_CEIL: f64 = 1.0;

/// How a consistency score `u` is turned into a penalty.
///
/// `Rectified` is the production mode: `u * exp(-c_shape * u)` rises from
/// zero, peaks at `u = 1/c_shape`, and decays, so both near-agreement and
/// wild disagreement are discounted. `Flat` keeps `u` unchanged. The two
/// comparison modes bracket it with a monotone increasing penalty
/// (`u^2 / (u + 0.1)`, focal-style emphasis on large `u`) and a hard cap
/// (`min(u, 0.1)`, self-paced style).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightingMode {
    Rectified,
    Flat,
    Increasing,
    Decreasing,
}

impl WeightingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rectified" => Ok(WeightingMode::Rectified),
            "flat" => Ok(WeightingMode::Flat),
            "increasing" => Ok(WeightingMode::Increasing),
            "decreasing" => Ok(WeightingMode::Decreasing),
            other => Err(Error::InvalidConfig(format!(
                "unknown weighting mode '{}' (expected rectified|flat|increasing|decreasing)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightingMode::Rectified => "rectified",
            WeightingMode::Flat => "flat",
            WeightingMode::Increasing => "increasing",
            WeightingMode::Decreasing => "decreasing",
        }
    }
}

/// Cap used by [`WeightingMode::Decreasing`] and the knee constant of
/// [`WeightingMode::Increasing`].
const COMPARE_KNEE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectConfig {
    pub c_shape: f64,
    pub mode: WeightingMode,
}

impl RectConfig {
    pub fn new(c_shape: f64, mode: WeightingMode) -> Result<Self> {
        if !(c_shape > 0.0) || !c_shape.is_finite() {
            return Err(Error::InvalidConfig(format!("c_shape must be finite and > 0, got {}", c_shape)));
        }
        Ok(RectConfig { c_shape, mode })
    }
}

impl Default for RectConfig {
    fn default() -> Self {
        RectConfig { c_shape: 10.0, mode: WeightingMode::Rectified }
    }
}

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 {
        return Err(shape_err(op, "empty batch".to_string()));
    }
    Ok(())
}

fn check_one_hot(labels: &Matrix) -> Result<()> {
    for r in 0..labels.rows() {
        let mut ones = 0usize;
        for &v in labels.row(r) {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::InvalidData(format!("label row {} is not one-hot", r)));
            }
        }
        if ones != 1 {
            return Err(Error::InvalidData(format!("label row {} is not one-hot", r)));
        }
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// Mean negative log-likelihood: `-(1/k) * sum_ij y_ij ln p_ij`.
pub fn cross_entropy(probs: &Matrix, labels: &Matrix) -> Result<f64> {
    check_same_shape("cross_entropy", probs, labels)?;
    check_one_hot(labels)?;
    let mut acc = 0.0;
    for (p, y) in probs.data().iter().zip(labels.data()) {
        if *y != 0.0 {
            acc += y * clamp_prob(*p).ln();
        }
    }
    let loss = -acc / probs.rows() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy".into()));
    }
    Ok(loss)
}

/// Mean over rows of `KL(p_o || p_i) = sum_j p_o ln(p_o / p_i)`; the
/// reference distribution `p_o` comes first.
pub fn kl_consistency(p_o: &Matrix, p_i: &Matrix) -> Result<f64> {
    check_same_shape("kl_consistency", p_o, p_i)?;
    let mut acc = 0.0;
    for (o, i) in p_o.data().iter().zip(p_i.data()) {
        acc += o * (clamp_prob(*o).ln() - clamp_prob(*i).ln());
    }
    let u = acc / p_o.rows() as f64;
    if !u.is_finite() {
        return Err(Error::NonFinite("kl_consistency".into()));
    }
    Ok(u)
}

/// Penalty assigned to one consistency score.
pub fn rectify(u: f64, cfg: &RectConfig) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::InvalidData(format!("consistency score must be finite and >= 0, got {}", u)));
    }
    Ok(match cfg.mode {
        WeightingMode::Rectified => u * (-cfg.c_shape * u).exp(),
        WeightingMode::Flat => u,
        WeightingMode::Increasing => u * u / (u + COMPARE_KNEE),
        WeightingMode::Decreasing => u.min(COMPARE_KNEE),
    })
}

/// The `u` value at which the rectified penalty peaks, and the peak value.
pub fn rectified_peak(c_shape: f64) -> (f64, f64) {
    (1.0 / c_shape, 1.0 / (c_shape * std::f64::consts::E))
}

/// Per-batch consistency scores, one per pseudo-label set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySet(Vec<f64>);

impl ConsistencySet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("consistency set is empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidData(format!("consistency value {} at index {} invalid", v, i)));
            }
        }
        Ok(ConsistencySet(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean penalty over the set: `(1/Q) sum_i rectify(u_i)`. In `Flat` mode this
/// is exactly the arithmetic mean of the scores.
pub fn meta_loss(set: &ConsistencySet, cfg: &RectConfig) -> Result<f64> {
    let mut acc = 0.0;
    for &u in set.values() {
        acc += rectify(u, cfg)?;
    }
    Ok(acc / set.len() as f64)
}

/// Blended objective `(1 - alpha) * ce + alpha * meta`.
pub fn total_loss(ce: f64, meta: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {}", alpha)));
    }
    if !ce.is_finite() || !meta.is_finite() {
        return Err(Error::NonFinite("total_loss inputs".into()));
    }
    Ok((1.0 - alpha) * ce + alpha * meta)
}

// ---- tape builders ----------------------------------------------------

/// Records cross-entropy of `probs` against constant one-hot `labels`.
pub fn cross_entropy_node(tape: &mut Tape, probs: NodeId, labels: NodeId) -> Result<NodeId> {
    let (pr, pc) = tape.value(probs).shape();
    let (lr, lc) = tape.value(labels).shape();
    if (pr, pc) != (lr, lc) {
        return Err(shape_err("cross_entropy", format!("{}x{} vs {}x{}", pr, pc, lr, lc)));
    }
    check_one_hot(tape.value(labels))?;
    let clamped = tape.clamp(probs, PROB_FLOOR, PROB_CEIL)?;
    let lp = tape.log(clamped)?;
    let picked = tape.hadamard(labels, lp)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / pr as f64)
}

/// Records the mean-over-rows KL divergence of `p_o` from `p_i`.
pub fn kl_node(tape: &mut Tape, p_o: NodeId, p_i: NodeId) -> Result<NodeId> {
    let (or, oc) = tape.value(p_o).shape();
    let (ir, ic) = tape.value(p_i).shape();
    if (or, oc) != (ir, ic) {
        return Err(shape_err("kl_consistency", format!("{}x{} vs {}x{}", or, oc, ir, ic)));
    }
    let o_clamped = tape.clamp(p_o, PROB_FLOOR, PROB_CEIL)?;
    let i_clamped = tape.clamp(p_i, PROB_FLOOR, PROB_CEIL)?;
    let lo = tape.log(o_clamped)?;
    let li = tape.log(i_clamped)?;
    let diff = tape.sub(lo, li)?;
    let w = tape.hadamard(p_o, diff)?;
    let total = tape.sum(w)?;
    tape.scale(total, 1.0 / or as f64)
}

/// Records the penalty of a scalar consistency node.
pub fn rectify_node(tape: &mut Tape, u: NodeId, cfg: &RectConfig) -> Result<NodeId> {
    if tape.value(u).shape() != (1, 1) {
        return Err(shape_err("rectify", "consistency node must be scalar".to_string()));
    }
    match cfg.mode {
        WeightingMode::Rectified => {
            let neg = tape.scale(u, -cfg.c_shape)?;
            let e = tape.exp(neg)?;
            tape.hadamard(u, e)
        }
        WeightingMode::Flat => Ok(u),
        WeightingMode::Increasing => {
            let u2 = tape.hadamard(u, u)?;
            let den = tape.linear(&[(1.0, u)], COMPARE_KNEE)?;
            tape.div(u2, den)
        }
        WeightingMode::Decreasing => tape.clamp(u, f64::NEG_INFINITY, COMPARE_KNEE),
    }
}
