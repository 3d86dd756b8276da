//! Mini-batch gradient descent for the contour classifier.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_gray, AugmentParams};
use super::eval::{argmax, Classifier};
use super::features::{FeatureVector, FEATURE_HEIGHT, FEATURE_WIDTH};
use super::network::{ArchConfig, ConvNet};
use crate::datamodel::ClassScheme;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    /// Applied to every training sample, freshly drawn each epoch.
    pub augment: Option<AugmentParams>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            conv1: 4,
            conv2: 8,
            hidden: 32,
            augment: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if let Some(a) = &self.augment {
            a.validate(FEATURE_WIDTH, FEATURE_HEIGHT)?;
        }
        Ok(())
    }

    pub fn arch(&self, classes: usize) -> ArchConfig {
        ArchConfig {
            in_h: FEATURE_HEIGHT,
            in_w: FEATURE_WIDTH,
            conv1: self.conv1,
            conv2: self.conv2,
            hidden: self.hidden,
            classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample cross-entropy over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (highest validation accuracy).
    pub best_epoch: usize,
}

impl TrainingCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_acc);
        }
        out
    }
}

/// A single network over a fixed label set.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel {
    pub net: ConvNet,
    pub labels: Vec<u8>,
}

impl Classifier for FlatModel {
    fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.net.predict_proba(x)
    }
}

fn targets(samples: &[FeatureVector], labels: &[u8]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            labels
                .iter()
                .position(|&l| l == s.label)
                .ok_or_else(|| Error::invalid(format!("sample label {} not among {labels:?}", s.label)))
        })
        .collect()
}

fn val_metrics(net: &ConvNet, val: &[FeatureVector], targets: &[usize]) -> (f64, f64) {
    if val.is_empty() {
        return (0.0, 0.0);
    }
    let (mut loss, mut hits) = (0.0, 0usize);
    for (s, &t) in val.iter().zip(targets) {
        let p = net.predict_proba(&s.values);
        loss += super::network::cross_entropy_probs(&p, t);
        hits += usize::from(argmax(&p) == t);
    }
    (loss / val.len() as f64, hits as f64 / val.len() as f64)
}

/// Trains a network mapping samples onto `labels` (output order). The
/// returned weights are those of the epoch with the best validation
/// accuracy, ties broken by lower validation loss then earlier epoch.
///
/// Each step subtracts `learning_rate` times the gradient of the summed
/// batch loss.
pub fn train_network(
    train: &[FeatureVector],
    val: &[FeatureVector],
    labels: &[u8],
    hyper: &HyperParams,
    seed: u64,
) -> Result<(FlatModel, TrainingCurve)> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let arch = hyper.arch(labels.len());
    let train_t = targets(train, labels)?;
    let val_t = targets(val, labels)?;
    if let Some(bad) = train.iter().chain(val).find(|s| s.values.len() != arch.input_len()) {
        return Err(Error::invalid(format!(
            "feature length {} does not match network input {}",
            bad.values.len(),
            arch.input_len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ConvNet::new(arch, rng.next_u64())?;
    let mut best = net.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut curve = TrainingCurve::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let augmented: Option<Vec<Vec<f64>>> = match &hyper.augment {
                Some(a) => Some(
                    batch
                        .iter()
                        .map(|&i| augment_gray(&train[i].values, FEATURE_WIDTH, FEATURE_HEIGHT, a, rng.next_u64()))
                        .collect::<Result<_>>()?,
                ),
                None => None,
            };
            let inputs: Vec<&[f64]> = match &augmented {
                Some(v) => v.iter().map(Vec::as_slice).collect(),
                None => batch.iter().map(|&i| train[i].values.as_slice()).collect(),
            };
            let batch_targets: Vec<usize> = batch.iter().map(|&i| train_t[i]).collect();
            let (loss, grad) = net.batch_gradient(&inputs, &batch_targets);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                *p -= hyper.learning_rate * g;
            }
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_acc) = val_metrics(&net, val, &val_t);
        curve.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        // Without validation data the final weights are kept.
        if val.is_empty() || (val_acc, -val_loss) > best_key {
            best_key = (val_acc, -val_loss);
            best = net.clone();
            curve.best_epoch = epoch;
        }
    }
    Ok((
        FlatModel {
            net: best,
            labels: labels.to_vec(),
        },
        curve,
    ))
}

/// Trains a flat classifier over all labels of `scheme`.
pub fn train(
    train: &[FeatureVector],
    val: &[FeatureVector],
    scheme: &ClassScheme,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(FlatModel, TrainingCurve)> {
    train_network(train, val, &scheme.labels(), hyper, seed)
}
