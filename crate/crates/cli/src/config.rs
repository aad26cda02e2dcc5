//! Flat key=value experiment configuration.
//!
//! One assignment per line, `#` starts a comment, section prefixes are
//! dotted keys (`noise.rho = 0.4`). Unknown keys are errors so a typo can
//! never silently fall back to a default.

use std::path::{Path, PathBuf};

use rml_core::error::{Error, Result};
use rml_core::losses::WeightingMode;
use rml_core::noise::NoiseKind;
use rml_core::tape::GradOrder;
use rml_core::trainer::{NeighborSpace, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    Rings,
    Csv,
}

impl DataKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DataKind::Blobs),
            "rings" => Ok(DataKind::Rings),
            "csv" => Ok(DataKind::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown data.kind '{}' (expected blobs | rings | csv)",
                other
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    /// Source file for `kind = csv`.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub val_fraction: f64,
    pub noise_kind: NoiseKind,
    pub noise_rho: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                kind: DataKind::Blobs,
                n: 1500,
                classes: 3,
                dim: 2,
                spread: 0.25,
                path: None,
            },
            val_fraction: 0.2,
            noise_kind: NoiseKind::None,
            noise_rho: 0.0,
            hidden: vec![32],
            train: TrainConfig::desk(),
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{}: cannot parse '{}'", key, value)))
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("model.hidden: cannot parse '{}'", w)))
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.kind" => self.data.kind = DataKind::parse(value)?,
            "data.n" => self.data.n = parse_num(key, value)?,
            "data.classes" => self.data.classes = parse_num(key, value)?,
            "data.dim" => self.data.dim = parse_num(key, value)?,
            "data.spread" => self.data.spread = parse_num(key, value)?,
            "data.path" => self.data.path = Some(PathBuf::from(value)),
            "split.val_fraction" => self.val_fraction = parse_num(key, value)?,
            "noise.kind" => self.noise_kind = NoiseKind::parse(value)?,
            "noise.rho" => self.noise_rho = parse_num(key, value)?,
            "model.hidden" => self.hidden = parse_hidden(value)?,
            "train.alpha" => self.train.alpha = parse_num(key, value)?,
            "train.beta" => self.train.beta = parse_num(key, value)?,
            "train.lr" => self.train.lr = parse_num(key, value)?,
            "train.q" => self.train.q = parse_num(key, value)?,
            "train.m" => self.train.m = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "train.c_shape" => self.train.c_shape = parse_num(key, value)?,
            "train.weighting" => self.train.weighting = WeightingMode::parse(value)?,
            "train.start_epoch" => self.train.start_epoch = parse_num(key, value)?,
            "train.epochs" => self.train.epochs = parse_num(key, value)?,
            "train.momentum" => self.train.momentum = parse_num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "train.lr_decay" => self.train.lr_decay = parse_num(key, value)?,
            "train.lr_decay_every" => self.train.lr_decay_every = parse_num(key, value)?,
            "train.order" => {
                self.train.order = match value {
                    "first" => GradOrder::First,
                    "second" => GradOrder::Second,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "train.order: '{}' (expected first | second)",
                            other
                        )))
                    }
                }
            }
            "train.k_nn" => self.train.k_nn = parse_num(key, value)?,
            "train.neighbor_space" => self.train.neighbor_space = NeighborSpace::parse(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key '{}'", other))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("config line {}: expected key = value, got '{}'", i + 1, line))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("config line {}: {}", i + 1, e)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.kind == DataKind::Csv && self.data.path.is_none() {
            return Err(Error::InvalidConfig("data.kind = csv requires data.path".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rho) {
            return Err(Error::InvalidConfig(format!("noise.rho must be in [0, 1], got {}", self.noise_rho)));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(cfg.data.n, 1500);
        assert_eq!(cfg.hidden, vec![32]);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn assignments_comments_and_spacing_parse() {
        let text = "
# an experiment
data.n = 600
noise.kind=symmetric
noise.rho = 0.4   # forty percent
train.alpha = 0.5
model.hidden = 16, 8
";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.data.n, 600);
        assert_eq!(cfg.noise_kind, NoiseKind::Symmetric);
        assert!((cfg.noise_rho - 0.4).abs() < 1e-15);
        assert_eq!(cfg.hidden, vec![16, 8]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_line_number() {
        let err = ExperimentConfig::parse_str("data.nn = 5").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{}", msg);
        assert!(msg.contains("data.nn"), "{}", msg);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = ExperimentConfig::parse_str("train.alpha = high").unwrap_err();
        assert!(err.to_string().contains("train.alpha"), "{}", err);
        assert!(ExperimentConfig::parse_str("train.alpha 0.5").is_err());
    }

    #[test]
    fn nested_validation_runs_at_parse_time() {
        assert!(ExperimentConfig::parse_str("train.alpha = 2.0").is_err());
        assert!(ExperimentConfig::parse_str("noise.rho = 1.5").is_err());
        assert!(ExperimentConfig::parse_str("data.kind = csv").is_err());
        assert!(ExperimentConfig::parse_str("train.q = 0\ntrain.alpha = 0.5").is_err());
    }

    #[test]
    fn empty_hidden_means_a_linear_model() {
        let cfg = ExperimentConfig::parse_str("model.hidden =").unwrap();
        assert!(cfg.hidden.is_empty());
    }
}
