//! The five commands. Every one is a deterministic function of its config
//! file and root seed; stage randomness is derived through named substreams
//! (`data`, `split`, `noise`, and the trainer's own streams) so changing
//! one stage never perturbs another.

use std::path::Path;

use rml_core::data::{load_csv, make_blobs, make_rings, save_csv, split, Dataset, SplitSpec};
use rml_core::error::{Error, Result};
use rml_core::losses::WeightingMode;
use rml_core::metrics::evaluate;
use rml_core::model::{ModelSpec, ParamSet};
use rml_core::noise::{NoiseKind, NoiseSpec, PairMap};
use rml_core::rng::stream_seed;
use rml_core::trainer::{metrics_csv, train, TrainState};

use crate::config::{DataKind, ExperimentConfig};

fn load_dataset(cfg: &ExperimentConfig, root: u64) -> Result<Dataset> {
    match cfg.data.kind {
        DataKind::Blobs => make_blobs(
            cfg.data.n,
            cfg.data.classes,
            cfg.data.dim,
            cfg.data.spread,
            stream_seed(root, "data"),
        ),
        DataKind::Rings => make_rings(cfg.data.n, cfg.data.classes, stream_seed(root, "data")),
        DataKind::Csv => {
            let path = cfg.data.path.as_ref().expect("validated");
            let ds = load_csv(path)?;
            // data.classes acts as a lower bound for files; labels beyond
            // it are an error surfaced by with_classes.
            let classes = ds.classes.max(cfg.data.classes);
            ds.with_classes(classes)
        }
    }
}

fn noise_spec(cfg: &ExperimentConfig, root: u64, classes: usize) -> Result<Option<NoiseSpec>> {
    if cfg.noise_kind == NoiseKind::None {
        return Ok(None);
    }
    let pairs = match cfg.noise_kind {
        NoiseKind::Asymmetric | NoiseKind::Mixed => Some(PairMap::adjacent(classes)?),
        _ => None,
    };
    let spec = NoiseSpec { kind: cfg.noise_kind, rho: cfg.noise_rho, pairs, seed: stream_seed(root, "noise") };
    spec.validate(classes)?;
    Ok(Some(spec))
}

pub fn cmd_generate(cfg: &ExperimentConfig, root: u64, out: &Path) -> Result<()> {
    if cfg.data.kind == DataKind::Csv {
        return Err(Error::InvalidConfig(
            "generate needs data.kind = blobs or rings, not csv".into(),
        ));
    }
    let ds = load_dataset(cfg, root)?;
    save_csv(&ds, out)?;
    println!(
        "rows={} classes={} dim={} out={}",
        ds.len(),
        ds.classes,
        ds.dim(),
        out.display()
    );
    Ok(())
}

pub fn cmd_inject(cfg: &ExperimentConfig, root: u64, input: &Path, out: &Path) -> Result<()> {
    let mut ds = load_csv(input)?;
    let ds_classes = ds.classes.max(cfg.data.classes);
    ds = ds.with_classes(ds_classes)?;
    let spec = noise_spec(cfg, root, ds.classes)?.ok_or_else(|| {
        Error::InvalidConfig("inject needs noise.kind = symmetric | asymmetric | mixed".into())
    })?;
    let (noisy, report) = spec.apply(&ds.clean, ds.classes)?;
    ds.noisy = Some(noisy);
    save_csv(&ds, out)?;
    println!(
        "samples={} changed={} rate={:.6} label_accuracy={:.6} out={}",
        report.n_total,
        report.n_changed,
        report.rate,
        report.label_accuracy(),
        out.display()
    );
    Ok(())
}

/// Data -> split -> corrupt the training half -> train. The validation
/// split keeps its clean labels; a CSV that already carries noisy labels
/// trains on them when `noise.kind = none`.
pub fn run_pipeline(cfg: &ExperimentConfig, root: u64) -> Result<(TrainState, Dataset, Dataset)> {
    cfg.validate()?;
    let ds = load_dataset(cfg, root)?;
    let (mut tr, va) = split(&ds, &SplitSpec { val_fraction: cfg.val_fraction, seed: stream_seed(root, "split") })?;
    if let Some(spec) = noise_spec(cfg, root, tr.classes)? {
        let (noisy, _) = spec.apply(&tr.clean, tr.classes)?;
        tr.noisy = Some(noisy);
    }
    let mspec = ModelSpec::new(tr.dim(), cfg.hidden.clone(), tr.classes)?;
    let mut tc = cfg.train.clone();
    tc.seed = root;
    let state = train(&mspec, &tr, &va, &tc)?;
    Ok((state, tr, va))
}

pub fn cmd_train(cfg: &ExperimentConfig, root: u64, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (state, tr, va) = run_pipeline(cfg, root)?;

    std::fs::write(out_dir.join("metrics.csv"), metrics_csv(&state.history))?;
    state.warmup_params.save(&out_dir.join("model_warmup.ckpt"))?;
    state.params.save(&out_dir.join("model_final.ckpt"))?;
    let report = evaluate(&state.params, &va)?;
    std::fs::write(out_dir.join("eval.csv"), report.to_csv())?;

    // Fraction of training labels that survived corruption (1.0 when the
    // run is clean); the baseline every correction metric is read against.
    let matches = tr.training_labels().iter().zip(&tr.clean).filter(|(a, b)| a == b).count();
    let original = matches as f64 / tr.len() as f64;

    let last = state.history.last().expect("epochs >= 1");
    println!(
        "epochs={} original_label_accuracy={:.6} val_accuracy={:.6} label_correction_accuracy={:.6} out={}",
        state.history.len(),
        original,
        last.val_accuracy,
        last.label_correction_accuracy,
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(checkpoint: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    let params = ParamSet::load(checkpoint)?;
    let loaded = load_csv(input)?;
    let classes = params.spec().classes.max(loaded.classes);
    let ds = loaded.with_classes(classes)?;
    let report = evaluate(&params, &ds)?;
    match out {
        Some(path) => std::fs::write(path, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    println!("n={} accuracy={:.6}", report.n, report.accuracy);
    Ok(())
}

const SWEEP_PARAMS: &[&str] = &["q", "alpha", "rho", "weighting"];

fn apply_sweep_value(cfg: &mut ExperimentConfig, param: &str, value: &str) -> Result<()> {
    match param {
        "q" => {
            let v: usize = value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("q grid value '{}' is not an integer", value)))?;
            cfg.train.q = v;
            // q = 0 means the meta phase vanishes; the blend weight follows.
            if v == 0 {
                cfg.train.alpha = 0.0;
            }
        }
        "alpha" => {
            cfg.train.alpha = value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("alpha grid value '{}' is not a number", value)))?;
        }
        "rho" => {
            if cfg.noise_kind == NoiseKind::None {
                return Err(Error::InvalidConfig(
                    "a rho sweep needs noise.kind = symmetric | asymmetric | mixed".into(),
                ));
            }
            cfg.noise_rho = value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("rho grid value '{}' is not a number", value)))?;
        }
        "weighting" => cfg.train.weighting = WeightingMode::parse(value)?,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown sweep parameter '{}' (expected one of {})",
                other,
                SWEEP_PARAMS.join(" | ")
            )))
        }
    }
    cfg.validate()
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    root: u64,
    param: &str,
    grid: &str,
    seeds: usize,
    out: &Path,
) -> Result<()> {
    let values: Vec<&str> = grid.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    if seeds == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one seed".into()));
    }
    let param = param.to_lowercase();

    let mut csv = String::from("param,value,seed,val_accuracy,label_correction_accuracy\n");
    for value in &values {
        let mut acc_sum = 0.0;
        for s in 0..seeds {
            let run_root = root + s as u64;
            let mut run_cfg = cfg.clone();
            apply_sweep_value(&mut run_cfg, &param, value)?;
            let (state, _, _) = run_pipeline(&run_cfg, run_root)?;
            let last = state.history.last().expect("epochs >= 1");
            csv.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                param, value, run_root, last.val_accuracy, last.label_correction_accuracy
            ));
            acc_sum += last.val_accuracy;
        }
        println!(
            "param={} value={} seeds={} mean_val_accuracy={:.6}",
            param,
            value,
            seeds,
            acc_sum / seeds as f64
        );
    }
    std::fs::write(out, csv)?;
    println!("out={}", out.display());
    Ok(())
}
