use serde::Serialize;

use super::ClassifierError;

/// Binary confusion matrix with class 1 (fake) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Accuracy, precision, recall and F1. Undefined ratios (no predicted or no
/// actual positives) are reported as 0.
pub fn evaluate(y_true: &[u8], y_pred: &[u8]) -> Result<Evaluation, ClassifierError> {
    if y_true.len() != y_pred.len() {
        return Err(ClassifierError::Evaluation(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(ClassifierError::Evaluation("no samples".into()));
    }
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => {
                return Err(ClassifierError::Evaluation(format!(
                    "labels must be 0 or 1, got ({t}, {p})"
                )))
            }
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Evaluation {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        confusion: c,
    })
}
