use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification metrics; class 1 is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn compute_metrics(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let mut m = Metrics::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => m.tp += 1,
            (false, false) => m.tn += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    m.accuracy = ratio(m.tp + m.tn, predicted.len());
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = if m.precision + m.recall > 0.0 { 2.0 * m.precision * m.recall / (m.precision + m.recall) } else { 0.0 };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_positive_predictor() {
        // 35 of 100 subjects positive.
        let truth: Vec<usize> = (0..100).map(|i| usize::from(i < 35)).collect();
        let m = compute_metrics(&[1; 100], &truth).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!((m.precision - 0.35).abs() < 1e-12);
        assert!((m.f1 - 2.0 * 0.35 / 1.35).abs() < 1e-12);
        assert_eq!((m.f1 * 100.0).round() / 100.0, 0.52);
    }

    #[test]
    fn no_predicted_positives() {
        let m = compute_metrics(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.f1), (0.0, 0.0));
        assert!(compute_metrics(&[0], &[0, 1]).is_err());
    }
}
