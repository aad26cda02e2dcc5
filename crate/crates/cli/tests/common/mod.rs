//! Shared helpers for the CLI integration test targets: spawning the
//! binary, scratch directories, and parsing the `key=value` stdout lines.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Path to the compiled `rml` binary under test.
pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rml")
}

static DIR_SEQ: AtomicUsize = AtomicUsize::new(0);

/// Fresh scratch directory unique to this process and call site.
pub fn tmp_dir(tag: &str) -> PathBuf {
    let seq = DIR_SEQ.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!(
        "rml_cli_{}_{}_{}",
        tag,
        std::process::id(),
        seq
    ));
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

/// Run the binary with the given arguments and capture everything.
pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to spawn rml binary")
}

/// Run and require exit code 0, returning stdout.
pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "expected success for {:?}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Run and require a specific non-zero exit code, returning stderr.
pub fn run_err(args: &[&str], want_code: i32) -> String {
    let out = run(args);
    let code = out.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        want_code,
        "expected exit {} for {:?}\nstdout: {}\nstderr: {}",
        want_code,
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Extract the numeric value of a `key=value` token from program output.
pub fn grab(text: &str, key: &str) -> f64 {
    let prefix = format!("{}=", key);
    for tok in text.split_whitespace() {
        if let Some(v) = tok.strip_prefix(&prefix) {
            if let Ok(x) = v.parse::<f64>() {
                return x;
            }
        }
    }
    panic!("no numeric token `{}` in output:\n{}", key, text);
}

/// Write a text file, creating parents as needed.
pub fn write_file(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).expect("create parent dir");
    }
    std::fs::write(path, text).expect("write file");
}

pub fn read_file(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {}", path.display(), e))
}

/// Drop the final comma-separated column of every line (used to ignore
/// wall-clock timings when comparing metrics files).
pub fn strip_last_column(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse a CSV produced by the trainer into rows of string cells,
/// skipping the header line.
pub fn csv_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
        .collect()
}

/// Mean and sample standard error of a slice.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Collect `(value, seed) -> metric` points from a sweep results CSV with
/// header `param,value,seed,val_accuracy,label_correction_accuracy`.
/// Returns per-value vectors of val accuracies, keyed in file order.
pub fn sweep_groups(csv: &str) -> Vec<(String, Vec<f64>)> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for row in csv_rows(csv) {
        assert!(row.len() >= 5, "sweep row too short: {:?}", row);
        let value = row[1].clone();
        let acc: f64 = row[3].parse().expect("val_accuracy cell");
        match groups.iter_mut().find(|(v, _)| *v == value) {
            Some((_, xs)) => xs.push(acc),
            None => groups.push((value, vec![acc])),
        }
    }
    groups
}
