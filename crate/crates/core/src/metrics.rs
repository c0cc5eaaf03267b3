//! Binary classification metrics with fake as the positive class.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const CSV_HEADER: &str = "variant,accuracy,fake_p,fake_r,fake_f1,real_p,real_r,real_f1";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub fake: ClassScores,
    pub real: ClassScores,
}

impl MetricsReport {
    pub fn from_confusion(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::Usage("metrics over zero items".into()));
        }
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: (tp + tn) as f64 / total as f64,
            fake: ClassScores::from_counts(tp, fp, fn_),
            real: ClassScores::from_counts(tn, fn_, fp),
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// One CSV row under [`CSV_HEADER`].
    pub fn csv_row(&self, variant: &str) -> String {
        format!(
            "{variant},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.accuracy,
            self.fake.precision,
            self.fake.recall,
            self.fake.f1,
            self.real.precision,
            self.real.recall,
            self.real.f1
        )
    }
}

/// A record is predicted fake iff its probability is at least `threshold`.
pub fn compute_metrics(preds: &[f64], labels: &[f64], threshold: f64) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Usage("metrics over zero items".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p >= threshold, y >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    MetricsReport::from_confusion(tp, fp, tn, fn_)
}

/// Header plus one row per `(label, report)`.
pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (name, report) in rows {
        let _ = writeln!(out, "{}", report.csv_row(name));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let r = compute_metrics(&[0.9, 0.1, 0.6], &[1.0, 0.0, 1.0], DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for s in [r.fake, r.real] {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn all_fake_predictor() {
        let labels: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let r = compute_metrics(&[1.0; 10], &labels, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(
            (r.fake.recall, r.fake.precision, r.real.recall),
            (1.0, 0.5, 0.0)
        );
        assert_eq!(r.real.f1, 0.0);
    }

    #[test]
    fn hand_built_confusion() {
        let r = MetricsReport::from_confusion(3, 1, 4, 2).unwrap();
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        assert!((r.fake.precision - 0.75).abs() < 1e-15);
        assert!((r.fake.recall - 0.6).abs() < 1e-15);
        assert_eq!(format!("{:.4}", r.fake.f1), "0.6667");
        assert_eq!(
            r.csv_row("full"),
            "full,0.7000,0.7500,0.6000,0.6667,0.6667,0.8000,0.7273"
        );
    }

    #[test]
    fn threshold_is_inclusive() {
        let r = compute_metrics(&[0.5], &[1.0], DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.tp, 1);
    }

    #[test]
    fn usage_errors() {
        assert!(compute_metrics(&[], &[], 0.5).is_err());
        assert!(compute_metrics(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = MetricsReport::from_confusion(1, 0, 1, 0).unwrap();
        let csv = metrics_csv([("a", &r), ("b", &r)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,1.0000,"));
    }

    proptest! {
        #[test]
        fn swapping_classes_swaps_scores(items in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200)) {
            let preds: Vec<f64> = items.iter().map(|p| p.0).collect();
            let labels: Vec<f64> = items.iter().map(|p| p.1 as u8 as f64).collect();
            // Avoid predictions exactly at the threshold, where flipping is not symmetric.
            prop_assume!(preds.iter().all(|&p| p != 0.5));
            let a = compute_metrics(&preds, &labels, 0.5).unwrap();
            let flipped_p: Vec<f64> = preds.iter().map(|p| 1.0 - p).collect();
            let flipped_y: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
            let b = compute_metrics(&flipped_p, &flipped_y, 0.5).unwrap();
            prop_assert_eq!(a.fake, b.real);
            prop_assert_eq!(a.real, b.fake);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn scores_stay_in_unit_interval(items in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200)) {
            let preds: Vec<f64> = items.iter().map(|p| p.0).collect();
            let labels: Vec<f64> = items.iter().map(|p| p.1 as u8 as f64).collect();
            let r = compute_metrics(&preds, &labels, 0.5).unwrap();
            for v in [r.accuracy, r.fake.precision, r.fake.recall, r.fake.f1, r.real.precision, r.real.recall, r.real.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.total(), preds.len());
        }
    }
}
