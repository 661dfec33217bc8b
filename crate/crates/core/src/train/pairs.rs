//! Same-class pair sampling across the two encoder pools.

use rand::Rng;

use crate::error::{Error, Result};

/// Indices into the source and target pools plus the shared label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub source: usize,
    pub target: usize,
    pub label: usize,
}

/// Draws a class uniformly, then one member of that class from each pool
/// uniformly with replacement.
#[derive(Clone, Debug)]
pub struct PairSampler {
    source_by_class: Vec<Vec<usize>>,
    target_by_class: Vec<Vec<usize>>,
}

fn group(labels: &[usize], classes: usize, pool: &'static str) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        by_class[y].push(i);
    }
    if let Some(class) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass { class, pool });
    }
    Ok(by_class)
}

impl PairSampler {
    pub fn new(source_labels: &[usize], target_labels: &[usize], classes: usize) -> Result<Self> {
        Ok(Self {
            source_by_class: group(source_labels, classes, "source")?,
            target_by_class: group(target_labels, classes, "target")?,
        })
    }

    pub fn classes(&self) -> usize {
        self.source_by_class.len()
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> PairIndex {
        let label = rng.random_range(0..self.classes());
        let s = &self.source_by_class[label];
        let t = &self.target_by_class[label];
        PairIndex {
            source: s[rng.random_range(0..s.len())],
            target: t[rng.random_range(0..t.len())],
            label,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<PairIndex> {
        (0..batch).map(|_| self.sample_one(rng)).collect()
    }
}
