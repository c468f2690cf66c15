//! Ground-truth populations and random group assignments.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// How positives are placed in a generated population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMode {
    /// Each label is an independent Bernoulli(p) draw.
    Bernoulli,
    /// Exactly `round(p * n)` positives at uniformly random ids.
    #[default]
    FixedCount,
}

/// Binary ground-truth labels for samples `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    labels: Vec<bool>,
    prevalence: f64,
    seed: u64,
}

impl Population {
    /// Generates a population of `n` samples at prevalence `p`.
    pub fn generate(n: usize, prevalence: f64, seed: u64, mode: PopulationMode) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("population size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&prevalence) {
            return Err(Error::field("prevalence", format!("{prevalence} outside [0, 1]")));
        }
        let mut rng = rng::stream(seed, Purpose::Population, 0);
        let labels = match mode {
            PopulationMode::Bernoulli => (0..n).map(|_| rng.gen::<f64>() < prevalence).collect(),
            PopulationMode::FixedCount => {
                let positives = fixed_positive_count(n, prevalence);
                let mut labels = vec![false; n];
                for id in index::sample(&mut rng, n, positives) {
                    labels[id] = true;
                }
                labels
            }
        };
        Ok(Population { labels, prevalence, seed })
    }

    /// Wraps explicit labels; prevalence is set to the observed fraction.
    pub fn from_labels(labels: Vec<bool>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("population size must be at least 1"));
        }
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        Ok(Population { labels, prevalence, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> bool {
        self.labels[id]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn prevalence(&self) -> f64 {
        self.prevalence
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i)
    }
}

/// `round(p * n)`, halves rounded away from zero.
pub fn fixed_positive_count(n: usize, prevalence: f64) -> usize {
    ((prevalence * n as f64).round() as usize).min(n)
}

/// A partition of `0..n` into groups of `group_size`, plus at most one
/// smaller trailing group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    groups: Vec<Vec<usize>>,
    group_size: usize,
}

impl GroupAssignment {
    /// Chunks an explicit id order into consecutive blocks of `group_size`.
    pub fn from_order(order: Vec<usize>, group_size: usize) -> Result<Self> {
        if group_size == 0 || group_size > order.len() {
            return Err(Error::field(
                "group_size",
                format!("{group_size} must be in 1..={}", order.len()),
            ));
        }
        let mut seen = vec![false; order.len()];
        for &id in &order {
            if id >= order.len() || std::mem::replace(&mut seen[id], true) {
                return Err(Error::invalid(format!("order is not a permutation (id {id})")));
            }
        }
        let groups = order.chunks(group_size).map(<[usize]>::to_vec).collect();
        Ok(GroupAssignment { groups, group_size })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of samples covered.
    pub fn sample_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Uniformly random partition of `0..n` into `ceil(n / m)` groups.
pub fn assign_groups(n: usize, m: usize, seed: u64) -> Result<GroupAssignment> {
    assign_groups_on(n, m, seed, Purpose::Assignment)
}

pub(crate) fn assign_groups_on(
    n: usize,
    m: usize,
    seed: u64,
    purpose: Purpose,
) -> Result<GroupAssignment> {
    if m == 0 || m > n {
        return Err(Error::field("group_size", format!("{m} must be in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, purpose, 0));
    GroupAssignment::from_order(order, m)
}
