//! Synthetic datasets, the CSV interchange format, and train/validation
//! splitting.
//!
//! CSV schema: a mandatory header `f0,...,f{d-1},clean_label,noisy_label`,
//! one sample per row, features as decimal floats with 13 significant
//! digits (round-trips within 1e-12), labels as integers. The noisy column
//! may be entirely empty when no corruption has been applied.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub clean: Vec<usize>,
    pub noisy: Option<Vec<usize>>,
    pub classes: usize,
    pub tag: SplitTag,
}

impl Dataset {
    pub fn new(features: Matrix, clean: Vec<usize>, noisy: Option<Vec<usize>>, classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidData("no samples".into()));
        }
        if features.rows() != clean.len() {
            return Err(Error::InvalidData(format!(
                "{} feature rows but {} clean labels",
                features.rows(),
                clean.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidData(format!("need >= 2 classes, got {}", classes)));
        }
        if let Some(&bad) = clean.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidData(format!("clean label {} out of range ({} classes)", bad, classes)));
        }
        if let Some(ns) = &noisy {
            if ns.len() != clean.len() {
                return Err(Error::InvalidData(format!(
                    "{} clean labels but {} noisy labels",
                    clean.len(),
                    ns.len()
                )));
            }
            if let Some(&bad) = ns.iter().find(|&&l| l >= classes) {
                return Err(Error::InvalidData(format!("noisy label {} out of range ({} classes)", bad, classes)));
            }
        }
        Ok(Dataset { features, clean, noisy, classes, tag: SplitTag::Train })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Labels used for training: noisy when present, clean otherwise.
    pub fn training_labels(&self) -> &[usize] {
        self.noisy.as_deref().unwrap_or(&self.clean)
    }

    /// Widens the class count (e.g. when a config declares more classes
    /// than appear in a file). Refuses to shrink below observed labels.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        let observed = self.min_classes();
        if classes < observed {
            return Err(Error::InvalidData(format!(
                "declared {} classes but labels reach {}",
                classes,
                observed - 1
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    fn min_classes(&self) -> usize {
        let mut m = 0;
        for &l in self.clean.iter().chain(self.noisy.iter().flatten()) {
            m = m.max(l + 1);
        }
        m
    }

    /// Rows at `idx`, in order, as a new dataset (shares nothing).
    fn subset(&self, idx: &[usize], tag: SplitTag) -> Result<Dataset> {
        let d = self.dim();
        let mut feats = Matrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..d {
                feats.set(r, c, self.features.get(i, c));
            }
        }
        let clean = idx.iter().map(|&i| self.clean[i]).collect();
        let noisy = self.noisy.as_ref().map(|ns| idx.iter().map(|&i| ns[i]).collect());
        let mut ds = Dataset::new(feats, clean, noisy, self.classes)?;
        ds.tag = tag;
        Ok(ds)
    }
}

/// Class-mean placement for the blob generator: a regular unit-edge simplex
/// when it fits the ambient dimension, otherwise a unit-spaced circle (2-D+)
/// or integer line (1-D).
fn blob_means(c: usize, d: usize) -> Vec<Vec<f64>> {
    if c <= d + 1 {
        // Incremental regular simplex with edge 1: each new vertex sits
        // above the centroid of the previous ones at height sqrt((k+1)/2k).
        let mut verts: Vec<Vec<f64>> = vec![vec![0.0; d]];
        for k in 1..c {
            let mut g = vec![0.0; d];
            for v in &verts {
                for (gi, vi) in g.iter_mut().zip(v) {
                    *gi += vi / k as f64;
                }
            }
            let h = ((k + 1) as f64 / (2 * k) as f64).sqrt();
            g[k - 1] += h;
            verts.push(g);
        }
        // Center the construction at the origin.
        let mut centroid = vec![0.0; d];
        for v in &verts {
            for (ci, vi) in centroid.iter_mut().zip(v) {
                *ci += vi / c as f64;
            }
        }
        for v in &mut verts {
            for (vi, ci) in v.iter_mut().zip(&centroid) {
                *vi -= ci;
            }
        }
        verts
    } else if d >= 2 {
        let r = 0.5 / (std::f64::consts::PI / c as f64).sin();
        (0..c)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / c as f64;
                let mut v = vec![0.0; d];
                v[0] = r * a.cos();
                v[1] = r * a.sin();
                v
            })
            .collect()
    } else {
        (0..c).map(|j| vec![j as f64]).collect()
    }
}

/// Balanced class counts: sizes differ by at most one.
fn balanced_counts(n: usize, c: usize) -> Vec<usize> {
    (0..c).map(|j| n / c + usize::from(j < n % c)).collect()
}

/// Gaussian clusters with unit-spaced means; per-coordinate standard
/// deviation `spread`. At the default `spread = 0.25` adjacent means sit
/// four standard deviations apart, leaving small but nonzero class overlap.
pub fn make_blobs(n: usize, c: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if c < 2 {
        return Err(Error::InvalidConfig(format!("blobs need >= 2 classes, got {}", c)));
    }
    if n < c {
        return Err(Error::InvalidConfig(format!("blobs need n >= c, got n = {}, c = {}", n, c)));
    }
    if d == 0 {
        return Err(Error::InvalidConfig("blobs need d >= 1".into()));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidConfig(format!("spread must be finite and >= 0, got {}", spread)));
    }
    let means = blob_means(c, d);
    let counts = balanced_counts(n, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut feats = Matrix::zeros(n, d);
    let mut clean = Vec::with_capacity(n);
    let mut row = 0;
    for (j, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for col in 0..d {
                let z: f64 = normal.sample(&mut rng);
                feats.set(row, col, means[j][col] + spread * z);
            }
            clean.push(j);
            row += 1;
        }
    }
    Dataset::new(feats, clean, None, c)
}

/// Concentric 2-D annuli, one per class, radii 1, 2 (, 3) with width 0.5.
/// Classes are ring-separable but not linearly separable.
pub fn make_rings(n: usize, c: usize, seed: u64) -> Result<Dataset> {
    if !(2..=3).contains(&c) {
        return Err(Error::InvalidConfig(format!("rings support 2 or 3 classes, got {}", c)));
    }
    if n < c {
        return Err(Error::InvalidConfig(format!("rings need n >= c, got n = {}", n)));
    }
    let counts = balanced_counts(n, c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feats = Matrix::zeros(n, 2);
    let mut clean = Vec::with_capacity(n);
    let mut row = 0;
    for (j, &count) in counts.iter().enumerate() {
        let r0 = (j + 1) as f64;
        for _ in 0..count {
            let r = r0 + rng.gen_range(-0.25..0.25);
            let a = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            feats.set(row, 0, r * a.cos());
            feats.set(row, 1, r * a.sin());
            clean.push(j);
            row += 1;
        }
    }
    Dataset::new(feats, clean, None, c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { val_fraction: 0.1, seed: 0 }
    }
}

/// Uniform random train/validation split. Sizes are `n - round(n * frac)`
/// and `round(n * frac)`; both sides keep their rows in original dataset
/// order. Errors when either side would be empty.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if !(0.0..1.0).contains(&spec.val_fraction) {
        return Err(Error::InvalidConfig(format!("val fraction must be in [0, 1), got {}", spec.val_fraction)));
    }
    let val_n = (n as f64 * spec.val_fraction).round() as usize;
    if val_n == 0 || val_n >= n {
        return Err(Error::InvalidConfig(format!(
            "degenerate split: {} of {} samples for validation",
            val_n, n
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let mut val_idx = idx[..val_n].to_vec();
    let mut train_idx = idx[val_n..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.subset(&train_idx, SplitTag::Train)?, ds.subset(&val_idx, SplitTag::Val)?))
}

fn fmt_f64(v: f64) -> String {
    format!("{:.12e}", v)
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = ds.dim();
    for c in 0..d {
        out.push_str(&format!("f{},", c));
    }
    out.push_str("clean_label,noisy_label\n");
    for r in 0..ds.len() {
        for c in 0..d {
            out.push_str(&fmt_f64(ds.features.get(r, c)));
            out.push(',');
        }
        out.push_str(&ds.clean[r].to_string());
        out.push(',');
        if let Some(ns) = &ds.noisy {
            out.push_str(&ns[r].to_string());
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Loads the interchange CSV. The class count is inferred as
/// `max(label) + 1`; widen with [`Dataset::with_classes`] when a config
/// declares more. The noisy column must be filled for every row or for none.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::InvalidData("empty file (missing header)".into())),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[cols.len() - 2] != "clean_label" || cols[cols.len() - 1] != "noisy_label" {
        return Err(Error::InvalidData(
            "malformed header: expected f0,...,clean_label,noisy_label".into(),
        ));
    }
    let d = cols.len() - 2;
    let mut feats: Vec<f64> = Vec::new();
    let mut clean: Vec<usize> = Vec::new();
    let mut noisy_cells: Vec<Option<usize>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != d + 2 {
            return Err(Error::InvalidData(format!(
                "line {}: expected {} fields, found {}",
                lineno,
                d + 2,
                cells.len()
            )));
        }
        for (c, cell) in cells[..d].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidData(format!("line {}: non-numeric feature '{}' in column {}", lineno, cell, c))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("line {}: non-finite feature", lineno)));
            }
            feats.push(v);
        }
        let cl: usize = cells[d]
            .parse()
            .map_err(|_| Error::InvalidData(format!("line {}: bad clean label '{}'", lineno, cells[d])))?;
        clean.push(cl);
        let noisy_cell = cells[d + 1].trim();
        if noisy_cell.is_empty() {
            noisy_cells.push(None);
        } else {
            let nl: usize = noisy_cell
                .parse()
                .map_err(|_| Error::InvalidData(format!("line {}: bad noisy label '{}'", lineno, noisy_cell)))?;
            noisy_cells.push(Some(nl));
        }
    }
    if clean.is_empty() {
        return Err(Error::InvalidData("no samples".into()));
    }
    let filled = noisy_cells.iter().filter(|c| c.is_some()).count();
    let noisy = if filled == 0 {
        None
    } else if filled == noisy_cells.len() {
        Some(noisy_cells.into_iter().map(|c| c.unwrap()).collect())
    } else {
        let first_gap = noisy_cells.iter().position(|c| c.is_none()).unwrap();
        return Err(Error::InvalidData(format!(
            "line {}: noisy_label must be filled for all rows or none",
            first_gap + 2
        )));
    };
    let n = clean.len();
    let features = Matrix::new(n, d, feats)?;
    let mut classes = 0usize;
    for &l in clean.iter().chain(noisy.iter().flatten()) {
        classes = classes.max(l + 1);
    }
    Dataset::new(features, clean, noisy, classes.max(2))
}
