//! Two-stage classifier: a coarse network picks a group of neighbouring
//! classes, then a per-group network separates the members of that group.

use serde::{Deserialize, Serialize};

use super::eval::{argmax, Classifier};
use super::features::FeatureVector;
use super::train::{train_network, FlatModel, HyperParams, TrainingCurve};
use crate::datamodel::ClassScheme;
use crate::error::{Error, Result};

/// Groups used with the seven-class scheme.
pub fn seven_class_groups() -> Vec<Vec<u8>> {
    vec![vec![1], vec![2, 3], vec![4, 5], vec![6, 7]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub groups: Vec<Vec<u8>>,
    /// Outputs are group indices in `groups` order (labels `1..=G`).
    pub stage1: FlatModel,
    /// One network per group; `None` for single-member groups.
    pub stage2: Vec<Option<FlatModel>>,
    labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchicalPrediction {
    pub group: usize,
    pub label: u8,
    /// Whether a second-stage network was consulted.
    pub used_stage2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCurves {
    pub stage1: TrainingCurve,
    /// Indexed like the groups; `None` for single-member groups.
    pub stage2: Vec<Option<TrainingCurve>>,
}

fn validate_groups(groups: &[Vec<u8>], labels: &[u8]) -> Result<()> {
    let mut flat: Vec<u8> = groups.iter().flatten().copied().collect();
    flat.sort_unstable();
    if groups.len() < 2 || groups.iter().any(Vec::is_empty) || flat != labels {
        return Err(Error::invalid(format!(
            "groups {groups:?} must partition labels {labels:?} into at least two non-empty parts"
        )));
    }
    Ok(())
}

impl HierarchicalModel {
    pub fn new(groups: Vec<Vec<u8>>, stage1: FlatModel, stage2: Vec<Option<FlatModel>>) -> Result<Self> {
        let mut labels: Vec<u8> = groups.iter().flatten().copied().collect();
        labels.sort_unstable();
        validate_groups(&groups, &labels)?;
        if stage1.labels.len() != groups.len() || stage2.len() != groups.len() {
            return Err(Error::invalid("stage sizes do not match the group count"));
        }
        for (g, s2) in groups.iter().zip(&stage2) {
            match s2 {
                None if g.len() == 1 => {}
                Some(m) if m.labels == *g => {}
                _ => return Err(Error::invalid(format!("second stage for group {g:?} is inconsistent"))),
            }
        }
        Ok(HierarchicalModel {
            groups,
            stage1,
            stage2,
            labels,
        })
    }

    /// Composite decision: most probable group, then the most probable
    /// member of that group. Single-member groups skip the second stage.
    pub fn predict_detailed(&self, x: &[f64]) -> HierarchicalPrediction {
        let group = argmax(&self.stage1.predict_proba(x));
        match &self.stage2[group] {
            None => HierarchicalPrediction {
                group,
                label: self.groups[group][0],
                used_stage2: false,
            },
            Some(m) => HierarchicalPrediction {
                group,
                label: m.predict(x),
                used_stage2: true,
            },
        }
    }
}

impl Classifier for HierarchicalModel {
    fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// `P(label) = P1(group) * P2(label | group)`.
    fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let p1 = self.stage1.predict_proba(x);
        let mut out = vec![0.0; self.labels.len()];
        for (g, members) in self.groups.iter().enumerate() {
            let p2 = match &self.stage2[g] {
                Some(m) => m.predict_proba(x),
                None => vec![1.0],
            };
            for (&label, q) in members.iter().zip(p2) {
                let i = self.labels.iter().position(|&l| l == label).expect("validated");
                out[i] = p1[g] * q;
            }
        }
        out
    }

    fn predict(&self, x: &[f64]) -> u8 {
        self.predict_detailed(x).label
    }
}

fn group_of(groups: &[Vec<u8>], label: u8) -> Option<usize> {
    groups.iter().position(|g| g.contains(&label))
}

/// Trains both stages on the same training and validation samples. Every
/// label of `scheme` must occur in `train`.
pub fn train_hierarchical(
    train: &[FeatureVector],
    val: &[FeatureVector],
    scheme: &ClassScheme,
    groups: Vec<Vec<u8>>,
    hyper: &HyperParams,
    seed: u64,
) -> Result<(HierarchicalModel, HierarchyCurves)> {
    let labels = scheme.labels();
    validate_groups(&groups, &labels)?;
    let missing: Vec<u8> = labels
        .iter()
        .copied()
        .filter(|l| !train.iter().any(|s| s.label == *l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("classes {missing:?} have no training samples")));
    }

    let relabel = |samples: &[FeatureVector]| -> Result<Vec<FeatureVector>> {
        samples
            .iter()
            .map(|s| {
                let g = group_of(&groups, s.label)
                    .ok_or_else(|| Error::invalid(format!("label {} not in any group", s.label)))?;
                Ok(FeatureVector::new(s.values.clone(), g as u8 + 1))
            })
            .collect()
    };
    let group_labels: Vec<u8> = (1..=groups.len() as u8).collect();
    let (stage1, curve1) = train_network(&relabel(train)?, &relabel(val)?, &group_labels, hyper, seed)?;

    let mut stage2 = Vec::with_capacity(groups.len());
    let mut curves2 = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        if members.len() == 1 {
            stage2.push(None);
            curves2.push(None);
            continue;
        }
        let pick = |s: &[FeatureVector]| -> Vec<FeatureVector> {
            s.iter().filter(|x| members.contains(&x.label)).cloned().collect()
        };
        let stage_seed = seed.wrapping_add(g as u64 + 1);
        let (m, c) = train_network(&pick(train), &pick(val), members, hyper, stage_seed)?;
        stage2.push(Some(m));
        curves2.push(Some(c));
    }
    let model = HierarchicalModel::new(groups, stage1, stage2)?;
    Ok((
        model,
        HierarchyCurves {
            stage1: curve1,
            stage2: curves2,
        },
    ))
}
