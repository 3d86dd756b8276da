//! Classification metrics: confusion matrix, exact, adjacent-class and
//! top-2 probability accuracy, per-class precision and recall.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::datamodel::ClassScheme;
use crate::error::{Error, Result};

/// Anything that maps an input raster to a class label and a probability
/// per label.
pub trait Classifier {
    /// Labels in output order.
    fn labels(&self) -> &[u8];

    /// One probability per entry of [`Classifier::labels`], summing to 1.
    fn predict_proba(&self, x: &[f64]) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> u8 {
        let p = self.predict_proba(x);
        self.labels()[argmax(&p)]
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One scored test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub truth: u8,
    pub predicted: u8,
    /// Highest-probability label other than `predicted`.
    pub runner_up: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<u8>,
    /// Rows are true labels, columns predicted labels, both in `labels` order.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
    pub accuracy: f64,
    /// Predictions at most one class away from the truth count as correct.
    pub adjacent_accuracy: f64,
    /// Truth is the prediction or the runner-up by probability.
    pub top2_prob_accuracy: f64,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
}

impl EvalReport {
    /// Builds the report from scored samples. Panics if the metric
    /// invariants (accuracy bounded by both relaxed accuracies) fail.
    pub fn from_outcomes(labels: &[u8], outcomes: &[Outcome]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty test set"));
        }
        let k = labels.len();
        let pos = |l: u8| {
            labels
                .iter()
                .position(|&x| x == l)
                .ok_or_else(|| Error::invalid(format!("label {l} not in {labels:?}")))
        };
        let mut confusion = vec![vec![0usize; k]; k];
        let (mut exact, mut adjacent, mut top2) = (0usize, 0usize, 0usize);
        for o in outcomes {
            confusion[pos(o.truth)?][pos(o.predicted)?] += 1;
            if o.truth == o.predicted {
                exact += 1;
            }
            if o.truth.abs_diff(o.predicted) <= 1 {
                adjacent += 1;
            }
            if o.truth == o.predicted || o.runner_up == Some(o.truth) {
                top2 += 1;
            }
        }
        let n = outcomes.len();
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        debug_assert_eq!(trace, exact);
        let precision = (0..k)
            .map(|j| {
                let col: usize = (0..k).map(|i| confusion[i][j]).sum();
                (col > 0).then(|| confusion[j][j] as f64 / col as f64)
            })
            .collect();
        let recall = (0..k)
            .map(|i| {
                let row: usize = confusion[i].iter().sum();
                (row > 0).then(|| confusion[i][i] as f64 / row as f64)
            })
            .collect();
        let report = EvalReport {
            labels: labels.to_vec(),
            confusion,
            n,
            accuracy: trace as f64 / n as f64,
            adjacent_accuracy: adjacent as f64 / n as f64,
            top2_prob_accuracy: top2 as f64 / n as f64,
            precision,
            recall,
        };
        assert!(report.accuracy <= report.adjacent_accuracy);
        assert!(report.accuracy <= report.top2_prob_accuracy);
        Ok(report)
    }

    /// Confusion matrix CSV: header `true\pred,<labels>`, one row per true label.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(&l.to_string());
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores one sample.
pub fn score<C: Classifier + ?Sized>(model: &C, sample: &FeatureVector) -> Outcome {
    let probs = model.predict_proba(&sample.values);
    let predicted = model.predict(&sample.values);
    let labels = model.labels();
    let runner_up = labels
        .iter()
        .zip(&probs)
        .filter(|(l, _)| **l != predicted)
        .fold(None::<(u8, f64)>, |best, (&l, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((l, p)),
        })
        .map(|(l, _)| l);
    Outcome {
        truth: sample.label,
        predicted,
        runner_up,
    }
}

/// Evaluates `model` on `test` under `scheme`'s label set.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, test: &[FeatureVector], scheme: &ClassScheme) -> Result<EvalReport> {
    let labels = scheme.labels();
    if model.labels() != labels.as_slice() {
        return Err(Error::invalid(format!(
            "model labels {:?} do not match scheme labels {labels:?}",
            model.labels()
        )));
    }
    let outcomes: Vec<Outcome> = test.iter().map(|s| score(model, s)).collect();
    EvalReport::from_outcomes(&labels, &outcomes)
}

/// Exact-match accuracy without building a full report.
pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &[FeatureVector]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.iter().filter(|s| model.predict(&s.values) == s.label).count();
    hits as f64 / data.len() as f64
}
