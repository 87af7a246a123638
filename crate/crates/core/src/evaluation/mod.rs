//! Recognition accuracy (micro and macro top-k) and the evaluation report.

mod localization;

pub use localization::*;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::textio::write_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    /// Fraction of instances.
    Micro,
    /// Unweighted mean of per-class hit rates.
    Macro,
}

/// Whether `label` is among the `k` highest scores of `row`. Equal scores
/// rank the lower class index first.
pub fn topk_hit(row: &[f64], label: usize, k: usize) -> bool {
    let s = row[label];
    let rank = row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < label))
        .count();
    rank < k
}

fn check_inputs(scores: &Matrix, labels: &[usize], k: usize) -> Result<()> {
    if scores.rows() != labels.len() {
        return Err(Error::Shape {
            op: "topk_accuracy",
            lhs: scores.shape(),
            rhs: (labels.len(), 1),
        });
    }
    if k == 0 || k > scores.cols() {
        return Err(Error::Config(format!("k = {k} outside 1..={}", scores.cols())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.cols()) {
        return Err(Error::Config(format!("label {bad} outside {} classes", scores.cols())));
    }
    Ok(())
}

/// Per-class top-k hit rate in percent; `None` for classes without samples.
pub fn per_class_accuracy(scores: &Matrix, labels: &[usize], k: usize) -> Result<Vec<Option<f64>>> {
    check_inputs(scores, labels, k)?;
    let mut hits = vec![0usize; scores.cols()];
    let mut counts = vec![0usize; scores.cols()];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        if topk_hit(scores.row(i), l, k) {
            hits[l] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
        .collect())
}

/// Top-k accuracy in percent over `N × K` score rows. Macro mode requires
/// every class to have at least one sample.
pub fn topk_accuracy(scores: &Matrix, labels: &[usize], k: usize, mode: AccuracyMode) -> Result<f64> {
    check_inputs(scores, labels, k)?;
    if labels.is_empty() {
        return Err(Error::EmptySequence("topk_accuracy"));
    }
    match mode {
        AccuracyMode::Micro => {
            let hits = labels
                .iter()
                .enumerate()
                .filter(|&(i, &l)| topk_hit(scores.row(i), l, k))
                .count();
            Ok(100.0 * hits as f64 / labels.len() as f64)
        }
        AccuracyMode::Macro => {
            let per_class = per_class_accuracy(scores, labels, k)?;
            let empty: Vec<String> = per_class
                .iter()
                .enumerate()
                .filter(|(_, a)| a.is_none())
                .map(|(j, _)| format!("class {j}"))
                .collect();
            if !empty.is_empty() {
                return Err(Error::EmptyClasses(empty));
            }
            Ok(per_class.iter().flatten().sum::<f64>() / per_class.len() as f64)
        }
    }
}

/// Recognition and (optionally) localization results of one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub micro_top1: f64,
    pub micro_top5: f64,
    pub macro_top1: f64,
    pub macro_top5: f64,
    pub per_class: Vec<(String, Option<f64>)>,
    /// `(tIoU threshold, mAP)` pairs, mAP as a fraction.
    pub map: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Accuracy figures from `N × K` scores; top-5 degrades to top-K for
    /// fewer than five classes.
    pub fn from_scores(model: &str, glosses: &[String], scores: &Matrix, labels: &[usize]) -> Result<Self> {
        let k5 = 5.min(scores.cols());
        let per_class = per_class_accuracy(scores, labels, 1)?;
        Ok(EvalReport {
            model: model.to_string(),
            micro_top1: topk_accuracy(scores, labels, 1, AccuracyMode::Micro)?,
            micro_top5: topk_accuracy(scores, labels, k5, AccuracyMode::Micro)?,
            macro_top1: topk_accuracy(scores, labels, 1, AccuracyMode::Macro)?,
            macro_top5: topk_accuracy(scores, labels, k5, AccuracyMode::Macro)?,
            per_class: glosses.iter().cloned().zip(per_class).collect(),
            map: Vec::new(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        let mut row = |k: &str, v: f64| writeln!(out, "{k}\t{v:?}").expect("write to string");
        row("micro_top1", self.micro_top1);
        row("micro_top5", self.micro_top5);
        row("macro_top1", self.macro_top1);
        row("macro_top5", self.macro_top5);
        for &(t, m) in &self.map {
            row(&format!("map@{t}"), m);
        }
        for (gloss, acc) in &self.per_class {
            let v = acc.map_or_else(|| "-".to_string(), |a| format!("{a:?}"));
            writeln!(out, "class_top1:{gloss}\t{v}").expect("write to string");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_tsv())
    }

    /// Human-readable summary for the terminal.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "model: {}", self.model).expect("write to string");
        writeln!(out, "            top-1    top-5").expect("write to string");
        writeln!(out, "  micro   {:7.2}  {:7.2}", self.micro_top1, self.micro_top5).expect("write to string");
        writeln!(out, "  macro   {:7.2}  {:7.2}", self.macro_top1, self.macro_top5).expect("write to string");
        if !self.map.is_empty() {
            let header: Vec<String> = self.map.iter().map(|(t, _)| format!("{t:>6}")).collect();
            let values: Vec<String> = self.map.iter().map(|(_, m)| format!("{:6.2}", 100.0 * m)).collect();
            writeln!(out, "  tIoU    {}", header.join(" ")).expect("write to string");
            writeln!(out, "  mAP     {}", values.join(" ")).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn all_correct_is_full_marks() {
        let s = scores(&[&[0.9, 0.1], &[0.2, 0.8]]);
        for mode in [AccuracyMode::Micro, AccuracyMode::Macro] {
            assert_eq!(topk_accuracy(&s, &[0, 1], 1, mode).unwrap(), 100.0);
        }
    }

    #[test]
    fn micro_and_macro_differ_on_imbalance() {
        let s = scores(&[&[0.9, 0.1], &[0.8, 0.2], &[0.7, 0.3], &[0.6, 0.4]]);
        let labels = [0, 0, 0, 1];
        assert_eq!(topk_accuracy(&s, &labels, 1, AccuracyMode::Micro).unwrap(), 75.0);
        assert_eq!(topk_accuracy(&s, &labels, 1, AccuracyMode::Macro).unwrap(), 50.0);
    }

    #[test]
    fn k_equal_classes_always_hits() {
        let s = scores(&[&[0.1, 0.5, 0.2], &[0.3, 0.3, 0.3]]);
        assert_eq!(topk_accuracy(&s, &[0, 2], 3, AccuracyMode::Micro).unwrap(), 100.0);
    }

    #[test]
    fn ties_rank_lower_index_first() {
        assert!(topk_hit(&[0.5, 0.5], 0, 1));
        assert!(!topk_hit(&[0.5, 0.5], 1, 1));
        assert!(topk_hit(&[0.5, 0.5, 0.1], 1, 2));
    }

    #[test]
    fn macro_names_empty_class() {
        let s = scores(&[&[0.9, 0.1, 0.0]]);
        match topk_accuracy(&s, &[0], 1, AccuracyMode::Macro) {
            Err(Error::EmptyClasses(names)) => assert_eq!(names, vec!["class 1", "class 2"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_k_and_labels_are_errors() {
        let s = scores(&[&[0.9, 0.1]]);
        assert!(topk_accuracy(&s, &[0], 0, AccuracyMode::Micro).is_err());
        assert!(topk_accuracy(&s, &[0], 3, AccuracyMode::Micro).is_err());
        assert!(topk_accuracy(&s, &[2], 1, AccuracyMode::Micro).is_err());
        assert!(topk_accuracy(&s, &[0, 1], 1, AccuracyMode::Micro).is_err());
    }

    #[test]
    fn report_formats() {
        let glosses = vec!["a".to_string(), "b".to_string()];
        let s = scores(&[&[0.9, 0.1], &[0.8, 0.2]]);
        let mut r = EvalReport::from_scores("base", &glosses, &s, &[0, 1]).unwrap();
        r.map = vec![(0.5, 0.25)];
        assert_eq!(r.micro_top1, 50.0);
        assert_eq!(r.micro_top5, 100.0);
        let tsv = r.to_tsv();
        assert!(tsv.contains("map@0.5\t0.25\n"));
        assert!(tsv.contains("class_top1:b\t0.0\n"));
        assert!(r.table().contains("25.00"));
    }
}
