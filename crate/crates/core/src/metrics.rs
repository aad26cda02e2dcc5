//! Evaluation: accuracy, per-class accuracy, confusion counts, and the
//! label-correction score (how often the trained model's prediction on a
//! corrupted training sample recovers the sample's clean label).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{predict, ParamSet};

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per row of a probability (or logit) matrix.
pub fn predictions(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows()).map(|r| argmax_row(probs.row(r))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, raw counts.
    pub confusion: Vec<Vec<usize>>,
    /// Per-class recall; `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_predictions(pred: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::InvalidData(format!(
                "{} predictions but {} labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::InvalidData("no samples".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in pred.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::InvalidData(format!(
                    "label {} out of range ({} classes)",
                    p.max(t),
                    classes
                )));
            }
            confusion[t][p] += 1;
        }
        let n = pred.len();
        let correct: usize = (0..classes).map(|j| confusion[j][j]).sum();
        let per_class = (0..classes)
            .map(|j| {
                let total: usize = confusion[j].iter().sum();
                (total > 0).then(|| confusion[j][j] as f64 / total as f64)
            })
            .collect();
        Ok(EvalReport { n, accuracy: correct as f64 / n as f64, confusion, per_class })
    }

    /// Renders the report as CSV: an `accuracy` header block followed by the
    /// confusion matrix with labeled rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n,{}\n", self.n));
        out.push_str(&format!("accuracy,{:.6}\n", self.accuracy));
        for (j, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => out.push_str(&format!("class_{}_accuracy,{:.6}\n", j, a)),
                None => out.push_str(&format!("class_{}_accuracy,\n", j)),
            }
        }
        let c = self.confusion.len();
        out.push_str("confusion_true\\pred");
        for p in 0..c {
            out.push_str(&format!(",{}", p));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&t.to_string());
            for &count in row {
                out.push_str(&format!(",{}", count));
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy of `params` against the clean labels of `ds`.
pub fn evaluate(params: &ParamSet, ds: &Dataset) -> Result<EvalReport> {
    let probs = predict(params, &ds.features)?;
    EvalReport::from_predictions(&predictions(&probs), &ds.clean, ds.classes)
}

/// Fraction of training samples whose model prediction equals the clean
/// label. On noisy training data this measures how far the model has moved
/// from the corrupted labels back toward the truth.
pub fn label_correction_accuracy(params: &ParamSet, train: &Dataset) -> Result<f64> {
    let report = evaluate(params, train)?;
    Ok(report.accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::{init_params, ModelSpec, ParamSet};

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_row(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_row(&[5.0]), 0);
        assert_eq!(argmax_row(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn hand_checked_confusion_matrix() {
        let pred = [0, 1, 1, 2, 0, 2];
        let truth = [0, 1, 2, 2, 1, 2];
        let r = EvalReport::from_predictions(&pred, &truth, 3).unwrap();
        assert_eq!(r.n, 6);
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 2]]);
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[1], Some(0.5));
        assert_eq!(r.per_class[2], Some(2.0 / 3.0));
    }

    #[test]
    fn absent_class_reports_none_not_zero() {
        let pred = [0, 0, 1];
        let truth = [0, 0, 1];
        let r = EvalReport::from_predictions(&pred, &truth, 3).unwrap();
        assert_eq!(r.per_class[2], None);
        assert!(r.to_csv().contains("class_2_accuracy,\n"));
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(EvalReport::from_predictions(&[3], &[0], 3).is_err());
        assert!(EvalReport::from_predictions(&[0], &[3], 3).is_err());
        assert!(EvalReport::from_predictions(&[], &[], 3).is_err());
        assert!(EvalReport::from_predictions(&[0, 1], &[0], 3).is_err());
    }

    #[test]
    fn zero_weight_model_predicts_class_zero_everywhere() {
        // All-zero parameters give uniform probabilities; the lowest-index
        // tie rule then predicts class 0 for every row, so accuracy on a
        // balanced set is exactly 1/c.
        let spec = ModelSpec::new(3, vec![8], 4).unwrap();
        let params = ParamSet::from_flat(spec.clone(), &vec![0.0; spec.param_count()]).unwrap();
        let ds = make_blobs(400, 4, 3, 0.25, 11).unwrap();
        let r = evaluate(&params, &ds).unwrap();
        assert!((r.accuracy - 0.25).abs() < 1e-15);
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[1], Some(0.0));
    }

    #[test]
    fn random_init_on_many_classes_scores_near_chance() {
        // Thirty classes, random parameters. Predictions of an untrained
        // model are spatially correlated with the class geometry, so a
        // binomial band around 1/30 is the wrong model; the honest claim
        // is order-of-magnitude: nowhere near trained performance.
        let c = 30;
        let n = 3000;
        let spec = ModelSpec::new(4, vec![16], c).unwrap();
        let params = init_params(&spec, 12345).unwrap();
        let ds = make_blobs(n, c, 4, 0.25, 77).unwrap();
        let r = evaluate(&params, &ds).unwrap();
        let chance = 1.0 / c as f64;
        assert!(r.accuracy < 4.0 * chance, "accuracy {} is not near chance {}", r.accuracy, chance);
    }

    #[test]
    fn csv_report_shape() {
        let r = EvalReport::from_predictions(&[0, 1], &[0, 1], 2).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,2");
        assert_eq!(lines[1], "accuracy,1.000000");
        assert!(lines.iter().any(|l| l.starts_with("confusion")));
        assert_eq!(lines.last().unwrap(), &"1,0,1");
    }
}
