//! Multi-layer perceptron softmax classifier.
//!
//! Layers are `x W + b` with relu between hidden layers and a row softmax on
//! the final logits. The same forward pass exists twice: a plain evaluation
//! over matrices and a tape-recorded version used for gradients; a test pins
//! them equal.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::tape::{NodeId, Tape};

const CHECKPOINT_MAGIC: &[u8; 8] = b"RMLCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        let spec = ModelSpec { input_dim, hidden, classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("model input_dim must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("model needs >= 2 classes, got {}", self.classes)));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden layer width must be >= 1".into()));
        }
        Ok(())
    }

    /// Layer input/output widths: `input_dim, hidden..., classes`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.classes);
        d
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Model parameters: weight and bias per layer, plus the spec they belong to.
/// `mats` interleaves `w0, b0, w1, b1, ...` and is the layout every gradient
/// and update routine aligns with.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    spec: ModelSpec,
    mats: Vec<Matrix>,
}

impl ParamSet {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn mats_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    pub fn layer_count(&self) -> usize {
        self.mats.len() / 2
    }

    pub fn from_mats(spec: ModelSpec, mats: Vec<Matrix>) -> Result<Self> {
        let dims = spec.dims();
        if mats.len() != 2 * (dims.len() - 1) {
            return Err(shape_err("param_set", format!("expected {} matrices, got {}", 2 * (dims.len() - 1), mats.len())));
        }
        for (l, w) in dims.windows(2).enumerate() {
            let (fi, fo) = (w[0], w[1]);
            if mats[2 * l].shape() != (fi, fo) {
                return Err(shape_err("param_set", format!("layer {} weight is {:?}, expected {:?}", l, mats[2 * l].shape(), (fi, fo))));
            }
            if mats[2 * l + 1].shape() != (1, fo) {
                return Err(shape_err("param_set", format!("layer {} bias is {:?}, expected {:?}", l, mats[2 * l + 1].shape(), (1, fo))));
            }
        }
        Ok(ParamSet { spec, mats })
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for m in &self.mats {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn from_flat(spec: ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(shape_err("from_flat", format!("expected {} values, got {}", spec.param_count(), flat.len())));
        }
        let mut mats = Vec::new();
        let mut at = 0;
        for w in spec.dims().windows(2) {
            let (fi, fo) = (w[0], w[1]);
            mats.push(Matrix::new(fi, fo, flat[at..at + fi * fo].to_vec())?);
            at += fi * fo;
            mats.push(Matrix::new(1, fo, flat[at..at + fo].to_vec())?);
            at += fo;
        }
        ParamSet::from_mats(spec, mats)
    }

    /// Declares every parameter matrix on `tape` (in `mats` order).
    pub fn declare(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.mats.iter().map(|m| tape.param(m.clone())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.spec.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.spec.classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.spec.hidden.len() as u32).to_le_bytes());
        for &h in &self.spec.hidden {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        for m in &self.mats {
            for v in m.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            if *at + n > bytes.len() {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let read_u32 = |at: &mut usize| -> Result<u32> {
            let s = take(at, 4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        };
        let version = read_u32(&mut at)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let input_dim = read_u32(&mut at)? as usize;
        let classes = read_u32(&mut at)? as usize;
        let n_hidden = read_u32(&mut at)? as usize;
        if n_hidden > 1024 {
            return Err(Error::Checkpoint(format!("implausible hidden layer count {}", n_hidden)));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(read_u32(&mut at)? as usize);
        }
        let spec = ModelSpec::new(input_dim, hidden, classes)
            .map_err(|e| Error::Checkpoint(format!("bad header: {}", e)))?;
        let count = spec.param_count();
        let mut flat = Vec::with_capacity(count);
        for _ in 0..count {
            let s = take(&mut at, 8)?;
            let v = f64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]);
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
            flat.push(v);
        }
        if at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        ParamSet::from_flat(spec, &flat)
    }
}

/// Uniform init on (-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases are
/// zero. Deterministic for a given seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mats = Vec::new();
    for w in spec.dims().windows(2) {
        let (fi, fo) = (w[0], w[1]);
        let a = (6.0 / (fi + fo) as f64).sqrt();
        let data: Vec<f64> = (0..fi * fo).map(|_| rng.gen_range(-a..a)).collect();
        mats.push(Matrix::new(fi, fo, data)?);
        mats.push(Matrix::zeros(1, fo));
    }
    ParamSet::from_mats(spec.clone(), mats)
}

fn check_input(params: &ParamSet, x: &Matrix) -> Result<()> {
    if x.cols() != params.spec.input_dim {
        return Err(shape_err("predict", format!("input has {} columns, model expects {}", x.cols(), params.spec.input_dim)));
    }
    if x.rows() == 0 {
        return Err(shape_err("predict", "empty input".to_string()));
    }
    Ok(())
}

/// Row-stochastic class probabilities for each input row.
pub fn predict(params: &ParamSet, x: &Matrix) -> Result<Matrix> {
    Ok(logits(params, x)?.row_softmax())
}

/// Pre-softmax outputs of the final layer.
pub fn logits(params: &ParamSet, x: &Matrix) -> Result<Matrix> {
    check_input(params, x)?;
    let layers = params.layer_count();
    let mut h = x.clone();
    for l in 0..layers {
        let w = &params.mats[2 * l];
        let b = &params.mats[2 * l + 1];
        let mut z = h.matmul(w);
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z.set(r, c, z.get(r, c) + b.get(0, c));
            }
        }
        h = if l + 1 < layers { z.map(|v| if v > 0.0 { v } else { 0.0 }) } else { z };
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(h)
}

/// Activations feeding the final layer, used as the neighbor-search space.
/// With no hidden layers this is the raw input.
pub fn features(params: &ParamSet, x: &Matrix) -> Result<Matrix> {
    check_input(params, x)?;
    let layers = params.layer_count();
    let mut h = x.clone();
    for l in 0..layers.saturating_sub(1) {
        let w = &params.mats[2 * l];
        let b = &params.mats[2 * l + 1];
        let mut z = h.matmul(w);
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                z.set(r, c, z.get(r, c) + b.get(0, c));
            }
        }
        h = z.map(|v| if v > 0.0 { v } else { 0.0 });
    }
    Ok(h)
}

/// Tape-recorded forward pass ending in row-softmax probabilities.
/// `param_nodes` must be a `declare` result (w, b per layer); `x` is any
/// node with `input_dim` columns.
pub fn probs_node(tape: &mut Tape, param_nodes: &[NodeId], x: NodeId) -> Result<NodeId> {
    let logits = logits_node(tape, param_nodes, x)?;
    tape.softmax(logits)
}

pub fn logits_node(tape: &mut Tape, param_nodes: &[NodeId], x: NodeId) -> Result<NodeId> {
    if param_nodes.is_empty() || param_nodes.len() % 2 != 0 {
        return Err(shape_err("probs_node", format!("{} param nodes, expected an even positive count", param_nodes.len())));
    }
    let layers = param_nodes.len() / 2;
    let mut h = x;
    for l in 0..layers {
        let z = tape.matmul(h, param_nodes[2 * l])?;
        let zb = tape.add_row(z, param_nodes[2 * l + 1])?;
        h = if l + 1 < layers { tape.relu(zb)? } else { zb };
    }
    Ok(h)
}
