//! Label corruption.
//!
//! Three regimes:
//!
//! * symmetric: with probability `rho` a label is redrawn uniformly from all
//!   `c` classes (the draw may repeat the original, so the expected changed
//!   fraction is `rho * (c-1)/c`);
//! * asymmetric: classes come in pairs; a paired label flips to its partner
//!   with probability `rho`, unpaired classes are never touched;
//! * mixed: each sample independently picks one of the two regimes with
//!   probability 1/2 and applies it at level `rho`.
//!
//! Injectors only ever see labels. Whoever calls them is responsible for
//! keeping an untouched clean copy for evaluation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Involutive partial pairing of classes: if `a` maps to `b` then `b` maps
/// back to `a`, and no class maps to itself. Classes absent from the map are
/// never corrupted by the asymmetric regime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMap {
    classes: usize,
    map: BTreeMap<usize, usize>,
}

impl PairMap {
    pub fn new(pairs: &[(usize, usize)], classes: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &(a, b) in pairs {
            if a >= classes || b >= classes {
                return Err(Error::InvalidConfig(format!(
                    "pair ({}, {}) out of range for {} classes",
                    a, b, classes
                )));
            }
            if a == b {
                return Err(Error::InvalidConfig(format!("class {} cannot pair with itself", a)));
            }
            if map.contains_key(&a) || map.contains_key(&b) {
                return Err(Error::InvalidConfig(format!("class {} or {} paired twice", a, b)));
            }
            map.insert(a, b);
            map.insert(b, a);
        }
        Ok(PairMap { classes, map })
    }

    /// Adjacent pairing `0<->1, 2<->3, ...`; with odd `classes` the last
    /// class stays unpaired.
    pub fn adjacent(classes: usize) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..classes / 2).map(|j| (2 * j, 2 * j + 1)).collect();
        PairMap::new(&pairs, classes)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn partner(&self, class: usize) -> Option<usize> {
        self.map.get(&class).copied()
    }

    pub fn is_involutive(&self) -> bool {
        self.map.iter().all(|(&a, &b)| self.map.get(&b) == Some(&a) && a != b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Symmetric,
    Asymmetric,
    Mixed,
}

impl NoiseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "symmetric" => Ok(NoiseKind::Symmetric),
            "asymmetric" => Ok(NoiseKind::Asymmetric),
            "mixed" => Ok(NoiseKind::Mixed),
            other => Err(Error::InvalidConfig(format!(
                "unknown noise kind '{}' (expected none|symmetric|asymmetric|mixed)",
                other
            ))),
        }
    }
}

/// Full description of a corruption pass.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rho: f64,
    /// Required by the asymmetric and mixed regimes.
    pub pairs: Option<PairMap>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("noise rho must be in [0, 1], got {}", self.rho)));
        }
        match self.kind {
            NoiseKind::Asymmetric | NoiseKind::Mixed => match &self.pairs {
                None => {
                    return Err(Error::InvalidConfig("asymmetric/mixed noise needs a pair map".into()));
                }
                Some(p) if p.classes() != classes => {
                    return Err(Error::InvalidConfig(format!(
                        "pair map covers {} classes but the dataset has {}",
                        p.classes(),
                        classes
                    )));
                }
                Some(_) => {}
            },
            NoiseKind::None | NoiseKind::Symmetric => {}
        }
        Ok(())
    }

    /// Corrupts a label vector; returns the noisy labels and a report.
    pub fn apply(&self, labels: &[usize], classes: usize) -> Result<(Vec<usize>, CorruptionReport)> {
        self.validate(classes)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidData(format!("label {} out of range for {} classes", bad, classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noisy = match self.kind {
            NoiseKind::None => labels.to_vec(),
            NoiseKind::Symmetric => inject_symmetric(labels, classes, self.rho, &mut rng),
            NoiseKind::Asymmetric => inject_asymmetric(labels, self.rho, self.pairs.as_ref().unwrap(), &mut rng),
            NoiseKind::Mixed => inject_mixed(labels, classes, self.rho, self.pairs.as_ref().unwrap(), &mut rng),
        };
        let report = CorruptionReport::from_labels(labels, &noisy, classes)?;
        Ok((noisy, report))
    }
}

/// What a corruption pass did: counts of changed labels overall and per
/// clean class.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionReport {
    pub n_total: usize,
    pub n_changed: usize,
    pub rate: f64,
    pub per_class_changed: Vec<usize>,
}

impl CorruptionReport {
    pub fn from_labels(clean: &[usize], noisy: &[usize], classes: usize) -> Result<Self> {
        if clean.len() != noisy.len() {
            return Err(Error::InvalidData(format!(
                "clean and noisy label lengths differ: {} vs {}",
                clean.len(),
                noisy.len()
            )));
        }
        if clean.is_empty() {
            return Err(Error::InvalidData("empty label vector".into()));
        }
        let mut per_class = vec![0usize; classes];
        let mut changed = 0usize;
        for (&c, &n) in clean.iter().zip(noisy) {
            if c != n {
                changed += 1;
                per_class[c] += 1;
            }
        }
        Ok(CorruptionReport {
            n_total: clean.len(),
            n_changed: changed,
            rate: changed as f64 / clean.len() as f64,
            per_class_changed: per_class,
        })
    }

    /// Fraction of labels still equal to their clean value.
    pub fn label_accuracy(&self) -> f64 {
        1.0 - self.rate
    }
}

/// Fraction of positions where the two label vectors disagree.
pub fn corruption_rate(clean: &[usize], noisy: &[usize]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::InvalidData(format!(
            "label vectors differ in length: {} vs {}",
            clean.len(),
            noisy.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::InvalidData("empty label vector".into()));
    }
    let changed = clean.iter().zip(noisy).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / clean.len() as f64)
}

/// Symmetric regime: with probability `rho`, redraw uniformly over all
/// `classes` (the redraw may hit the original class).
pub fn inject_symmetric(labels: &[usize], classes: usize, rho: f64, rng: &mut impl Rng) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| {
            if rng.gen::<f64>() < rho {
                rng.gen_range(0..classes)
            } else {
                l
            }
        })
        .collect()
}

/// Asymmetric regime: paired classes flip to their partner with probability
/// `rho`; unpaired classes pass through.
pub fn inject_asymmetric(labels: &[usize], rho: f64, pairs: &PairMap, rng: &mut impl Rng) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| match pairs.partner(l) {
            Some(p) if rng.gen::<f64>() < rho => p,
            _ => l,
        })
        .collect()
}

/// Mixed regime: per sample, a fair coin picks symmetric or asymmetric, then
/// that regime runs at level `rho`.
pub fn inject_mixed(labels: &[usize], classes: usize, rho: f64, pairs: &PairMap, rng: &mut impl Rng) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| {
            if rng.gen::<f64>() < 0.5 {
                if rng.gen::<f64>() < rho {
                    rng.gen_range(0..classes)
                } else {
                    l
                }
            } else {
                match pairs.partner(l) {
                    Some(p) if rng.gen::<f64>() < rho => p,
                    _ => l,
                }
            }
        })
        .collect()
}
