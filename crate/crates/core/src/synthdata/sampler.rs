use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::CorpusManifest;
use crate::error::{param, Result};

/// Inverse combination-frequency distribution over manifest records.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl WeightedSampler {
    /// Normalized per-record weights; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    /// Draws `n` record indices.
    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Weights from the combination key of each record.
pub fn weights_from_keys(keys: &[String]) -> Result<WeightedSampler> {
    if keys.is_empty() {
        return Err(param("weighted sampler needs at least one record"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for k in keys {
        *counts.entry(k.as_str()).or_default() += 1;
    }
    let raw: Vec<f64> = keys.iter().map(|k| 1.0 / counts[k.as_str()] as f64).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let index = WeightedIndex::new(&weights).map_err(|e| param(format!("sampler weights: {e}")))?;
    Ok(WeightedSampler { weights, index })
}

/// Each record's weight is proportional to 1 / count of its attribute
/// combination, so every combination carries equal mass.
pub fn weighted_sampler(manifest: &CorpusManifest) -> Result<WeightedSampler> {
    let keys: Vec<String> = manifest.records.iter().map(|r| r.attributes.combination_key()).collect();
    weights_from_keys(&keys)
}
