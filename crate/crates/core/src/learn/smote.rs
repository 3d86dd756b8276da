//! Synthetic minority oversampling on feature vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::FeatureVector;
use crate::error::{Error, Result};

pub const DEFAULT_K_NEIGHBORS: usize = 5;

#[derive(Debug, Clone)]
pub struct SmoteOutcome {
    /// Originals first, in input order, then synthetic samples grouped by
    /// ascending class label.
    pub samples: Vec<FeatureVector>,
    pub original_count: usize,
    /// Classes with a single member, padded by duplication instead of
    /// interpolation.
    pub duplicated_classes: Vec<u8>,
    /// For each synthetic sample, the input indices of the member it was
    /// interpolated from and the neighbour it moved towards (equal for
    /// duplicates).
    pub parents: Vec<(usize, usize)>,
}

impl SmoteOutcome {
    pub fn synthetic(&self) -> &[FeatureVector] {
        &self.samples[self.original_count..]
    }

    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        class_counts(&self.samples)
    }
}

pub fn class_counts(samples: &[FeatureVector]) -> BTreeMap<u8, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.label).or_insert(0) += 1;
    }
    m
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest members (Euclidean) of `members` to member
/// `i`, excluding itself; ties broken by index.
fn nearest(members: &[&FeatureVector], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, m)| (sq_dist(&members[i].values, &m.values), j))
        .collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, j)| j).collect()
}

/// Oversamples every class up to the majority count. A synthetic sample is
/// `x + lambda * (x_nn - x)` for a random member `x`, one of its `k_neighbors`
/// nearest same-class neighbours `x_nn` and `lambda ~ U[0, 1)`.
pub fn smote_balance(train: &[FeatureVector], k_neighbors: usize, seed: u64) -> Result<SmoteOutcome> {
    if k_neighbors == 0 {
        return Err(Error::invalid("k_neighbors must be at least 1"));
    }
    if let Some(first) = train.first() {
        if train.iter().any(|s| s.values.len() != first.values.len()) {
            return Err(Error::invalid("feature vectors differ in length"));
        }
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = train.to_vec();
    let mut duplicated_classes = Vec::new();
    let mut parents = Vec::new();
    for (&label, indices) in &by_class {
        let members: Vec<&FeatureVector> = indices.iter().map(|&i| &train[i]).collect();
        let need = target - members.len();
        if need == 0 {
            continue;
        }
        if members.len() == 1 {
            duplicated_classes.push(label);
            samples.extend(std::iter::repeat_n(members[0].clone(), need));
            parents.extend(std::iter::repeat_n((indices[0], indices[0]), need));
            continue;
        }
        let k = k_neighbors.min(members.len() - 1);
        let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; members.len()];
        for _ in 0..need {
            let i = rng.random_range(0..members.len());
            let nn = neighbours[i].get_or_insert_with(|| nearest(&members, i, k));
            let j = nn[rng.random_range(0..nn.len())];
            let lambda: f64 = rng.random();
            let (x, y) = (&members[i].values, &members[j].values);
            let values = x.iter().zip(y).map(|(a, b)| a + lambda * (b - a)).collect();
            samples.push(FeatureVector { values, label });
            parents.push((indices[i], indices[j]));
        }
    }
    Ok(SmoteOutcome {
        samples,
        original_count: train.len(),
        duplicated_classes,
        parents,
    })
}
