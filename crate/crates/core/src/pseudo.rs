//! Pseudo-label sets for the meta phase.
//!
//! Within one mini-batch, each of the `Q` synthetic label sets starts from
//! the batch's noisy one-hot labels and reassigns `m` uniformly chosen
//! positions; a reassigned row receives the (original, noisy) label of one
//! of its nearest neighbors in feature space, chosen uniformly from the
//! neighbor list. Neighbor search is exact squared Euclidean over the batch,
//! ties broken toward the lower row index, self excluded.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

/// Neighbor list length used throughout training.
pub const DEFAULT_NEIGHBORS: usize = 8;

/// Candidate ordered by (distance, index); the largest is the worst.
#[derive(PartialEq)]
struct Cand {
    dist: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-row nearest-neighbor lists over one batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    lists: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Neighbor row indices of `row`, nearest first.
    pub fn neighbors(&self, row: usize) -> &[usize] {
        &self.lists[row]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest neighbors for every row of `features`: the
/// `min(k_nn, rows - 1)` closest other rows, nearest first. Uses a bounded
/// worst-out heap per row.
pub fn build_neighbor_index(features: &Matrix, k_nn: usize) -> Result<NeighborIndex> {
    let rows = features.rows();
    if rows < 2 {
        return Err(Error::InvalidData(format!("neighbor index needs >= 2 rows, got {}", rows)));
    }
    if k_nn == 0 {
        return Err(Error::InvalidConfig("k_nn must be >= 1".into()));
    }
    let keep = k_nn.min(rows - 1);
    let mut lists = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(keep + 1);
        for j in 0..rows {
            if j == i {
                continue;
            }
            let d = squared_distance(features.row(i), features.row(j));
            if heap.len() < keep {
                heap.push(Cand { dist: d, idx: j });
            } else if let Some(worst) = heap.peek() {
                if (Cand { dist: d, idx: j }) < *worst {
                    heap.pop();
                    heap.push(Cand { dist: d, idx: j });
                }
            }
        }
        let mut chosen: Vec<Cand> = heap.into_vec();
        chosen.sort_unstable();
        lists.push(chosen.into_iter().map(|c| c.idx).collect());
    }
    Ok(NeighborIndex { lists })
}

/// One synthetic label set: the full one-hot label matrix and the (sorted)
/// positions that were reassigned.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Matrix,
    pub positions: Vec<usize>,
}

/// Builds one pseudo-label set from the batch's noisy one-hot `labels`.
/// Exactly `m` distinct positions are reassigned; each receives the original
/// noisy label row of one uniformly chosen neighbor. `m = 0` returns the
/// labels unchanged.
pub fn generate_pseudo_set(
    labels: &Matrix,
    index: &NeighborIndex,
    m: usize,
    rng: &mut impl Rng,
) -> Result<PseudoLabelSet> {
    let k = labels.rows();
    if index.len() != k {
        return Err(shape_err("pseudo_set", format!("index covers {} rows, labels have {}", index.len(), k)));
    }
    if m > k {
        return Err(Error::InvalidConfig(format!("cannot reassign {} of {} rows", m, k)));
    }
    let mut positions: Vec<usize> = if m == 0 { Vec::new() } else { sample(rng, k, m).into_vec() };
    positions.sort_unstable();
    let mut out = labels.clone();
    for &pos in &positions {
        let nbrs = index.neighbors(pos);
        let donor = nbrs[rng.gen_range(0..nbrs.len())];
        for c in 0..labels.cols() {
            out.set(pos, c, labels.get(donor, c));
        }
    }
    Ok(PseudoLabelSet { labels: out, positions })
}

/// Draws `q` pseudo-label sets sequentially from one RNG.
pub fn generate_q_sets(
    labels: &Matrix,
    index: &NeighborIndex,
    m: usize,
    q: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PseudoLabelSet>> {
    if q == 0 {
        return Err(Error::InvalidConfig("q must be >= 1 to generate pseudo-label sets".into()));
    }
    (0..q).map(|_| generate_pseudo_set(labels, index, m, rng)).collect()
}
