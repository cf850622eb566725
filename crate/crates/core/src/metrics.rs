//! Binary classification metrics with galaxy (label 0) as the positive class.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    Empty,
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class value {value} at index {index} is not 0 or 1")]
    OutOfRange { index: usize, value: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with NSC as the positive class.
    pub fn transposed(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }

    /// Counts one (prediction, label) pair.
    pub fn record(&mut self, prediction: usize, label: usize) {
        match (prediction, label) {
            (0, 0) => self.tp += 1,
            (0, _) => self.fp += 1,
            (_, 0) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&p, &l)) in predictions.iter().zip(labels).enumerate() {
        for value in [p, l] {
            if value > 1 {
                return Err(MetricsError::OutOfRange { index, value });
            }
        }
        cm.record(p, l);
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        n => Ok((cm.tp + cm.tn) as f64 / n as f64),
    }
}

/// A ratio whose denominator may vanish. `None` means undefined, never zero.
pub type Metric = Option<f64>;

fn ratio(num: u64, den: u64) -> Metric {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecallF1 {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> PrecisionRecallF1 {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    PrecisionRecallF1 { precision, recall, f1 }
}

/// `(f1_galaxy, f1_nsc)`.
pub fn per_class_f1(cm: &ConfusionMatrix) -> (Metric, Metric) {
    (precision_recall_f1(cm).f1, precision_recall_f1(&cm.transposed()).f1)
}

/// Structured report; field names are part of the external format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Metric,
    pub f1_galaxy: Metric,
    pub f1_nsc: Metric,
    pub confusion_matrix: ConfusionMatrix,
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let mut flags = Vec::new();
        let accuracy = accuracy(&cm).ok();
        if accuracy.is_none() {
            flags.push("empty_confusion_matrix".to_string());
        }
        for (name, cm) in [("galaxy", cm), ("nsc", cm.transposed())] {
            let prf = precision_recall_f1(&cm);
            for (metric, value) in [("precision", prf.precision), ("recall", prf.recall), ("f1", prf.f1)] {
                if value.is_none() {
                    flags.push(format!("{metric}_{name}_undefined"));
                }
            }
        }
        let (f1_galaxy, f1_nsc) = per_class_f1(&cm);
        Self { accuracy, f1_galaxy, f1_nsc, confusion_matrix: cm, flags }
    }
}

/// The four LCID-Blurry confusion matrices as (TP, FP, FN, TN), with the
/// reported accuracies in percent. Every set holds 73 galaxy and 43 NSC
/// samples; VGGNet misclassifies 24 of the NSC samples.
pub const LCID_BLURRY_FIXTURES: [(&str, ConfusionMatrix, f64); 4] = [
    ("HR-CelestialNet", ConfusionMatrix::new(72, 17, 1, 26), 84.48),
    ("VGGNet", ConfusionMatrix::new(72, 24, 1, 19), 78.45),
    ("AlexNet", ConfusionMatrix::new(69, 24, 4, 19), 75.86),
    ("ResNet", ConfusionMatrix::new(55, 11, 18, 32), 75.00),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_cases() {
        assert_abs_diff_eq!(accuracy(&ConfusionMatrix::new(72, 17, 1, 26)).unwrap(), 98.0 / 116.0);
        assert_abs_diff_eq!(accuracy(&ConfusionMatrix::new(55, 11, 18, 32)).unwrap(), 0.75);
        assert_eq!(accuracy(&ConfusionMatrix::new(5, 0, 0, 5)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionMatrix::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn precision_recall_f1_from_blurry_fixture() {
        let prf = precision_recall_f1(&ConfusionMatrix::new(72, 17, 1, 26));
        assert_abs_diff_eq!(prf.precision.unwrap(), 72.0 / 89.0);
        assert_abs_diff_eq!(prf.recall.unwrap(), 72.0 / 73.0);
        assert_abs_diff_eq!(prf.f1.unwrap(), 0.888_888_9, epsilon = 1e-6);
        let (_, f1_nsc) = per_class_f1(&ConfusionMatrix::new(72, 17, 1, 26));
        assert_abs_diff_eq!(f1_nsc.unwrap(), 0.742_857_1, epsilon = 1e-6);
    }

    #[test]
    fn undefined_metrics_are_flagged() {
        let prf = precision_recall_f1(&ConfusionMatrix::new(0, 3, 4, 2));
        assert_eq!(prf.precision, Some(0.0));
        assert_eq!(prf.recall, Some(0.0));
        assert_eq!(prf.f1, None);
        let report = MetricsReport::from_confusion(ConfusionMatrix::new(0, 3, 4, 2));
        assert!(report.flags.contains(&"f1_galaxy_undefined".to_string()));
        let none_positive = precision_recall_f1(&ConfusionMatrix::new(0, 0, 0, 9));
        assert_eq!((none_positive.precision, none_positive.recall), (None, None));
    }

    #[test]
    fn symmetric_and_perfect() {
        let (g, n) = per_class_f1(&ConfusionMatrix::new(10, 3, 3, 10));
        assert_eq!(g, n);
        assert_eq!(per_class_f1(&ConfusionMatrix::new(4, 0, 0, 6)), (Some(1.0), Some(1.0)));
        let prf = precision_recall_f1(&ConfusionMatrix::new(4, 0, 0, 6));
        assert_eq!((prf.precision, prf.recall, prf.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn confusion_from_vectors() {
        let labels = [0, 1, 1, 0, 1];
        let cm = confusion_matrix(&labels, &labels).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        let cm = confusion_matrix(&flipped, &labels).unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
        assert!(confusion_matrix(&[0], &[0, 1]).is_err());
        assert_eq!(confusion_matrix(&[2], &[0]), Err(MetricsError::OutOfRange { index: 0, value: 2 }));
    }

    #[test]
    fn blurry_fixtures_match_reported_accuracy() {
        for (name, cm, reported) in LCID_BLURRY_FIXTURES {
            assert_eq!((cm.tp + cm.fn_, cm.fp + cm.tn), (73, 43), "{name}");
            assert_abs_diff_eq!(accuracy(&cm).unwrap() * 100.0, reported, epsilon = 0.01);
        }
    }

    #[test]
    fn report_json_field_names() {
        let report = MetricsReport::from_confusion(ConfusionMatrix::new(72, 17, 1, 26));
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in ["accuracy", "f1_galaxy", "f1_nsc", "confusion_matrix", "flags"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["tp", "fp", "fn", "tn"] {
            assert!(v["confusion_matrix"].get(key).is_some(), "{key}");
        }
    }
}
