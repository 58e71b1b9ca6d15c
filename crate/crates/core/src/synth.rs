//! Planted-concept synthetic datasets: items partitioned into labeled
//! concept blocks, users assigned a primary concept, positives sampled
//! from the user's block with a configurable noise fraction. The ground
//! truth makes concept-recovery claims checkable at desk scale.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, DatasetConfig, InteractionDataset, ItemMeta, RawInteraction};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_concepts: usize,
    /// Probability that a positive ignores the user's concept block.
    pub noise: f64,
    pub positives_per_user_min: usize,
    pub positives_per_user_max: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 120,
            n_concepts: 4,
            noise: 0.1,
            positives_per_user_min: 15,
            positives_per_user_max: 25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_concepts == 0 {
            return Err(Error::Config("synth sizes must be ≥ 1".into()));
        }
        if self.n_concepts > self.n_items {
            return Err(Error::Config("more concepts than items".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1]", self.noise)));
        }
        if self.positives_per_user_min == 0
            || self.positives_per_user_min > self.positives_per_user_max
            || self.positives_per_user_max > self.n_items
        {
            return Err(Error::Config("bad positives_per_user range".into()));
        }
        Ok(())
    }
}

/// Concept assignments backing a generated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub concept_labels: Vec<String>,
    /// Item index (in generation order) → concept index.
    pub item_concepts: Vec<usize>,
    /// User index (in generation order) → concept index.
    pub user_concepts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub raw: Vec<RawInteraction>,
    pub metadata: std::collections::BTreeMap<String, ItemMeta>,
    pub ground_truth: GroundTruth,
    pub config: SynthConfig,
}

pub fn concept_of_item(item: usize, n_items: usize, n_concepts: usize) -> usize {
    item * n_concepts / n_items
}

/// Generate raw interactions plus metadata and ground truth. Item `j`
/// belongs to the contiguous concept block `j·C/N`; items carry their
/// concept as a label and a decade keyed to the concept.
pub fn generate_planted(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = Rng::seed_from_u64(config.seed);
    let concept_labels: Vec<String> = (0..config.n_concepts).map(|c| format!("c{c}")).collect();
    let item_concepts: Vec<usize> = (0..config.n_items)
        .map(|j| concept_of_item(j, config.n_items, config.n_concepts))
        .collect();
    let block_items: Vec<Vec<usize>> = (0..config.n_concepts)
        .map(|c| {
            (0..config.n_items)
                .filter(|&j| item_concepts[j] == c)
                .collect()
        })
        .collect();

    let mut metadata = std::collections::BTreeMap::new();
    for (j, &c) in item_concepts.iter().enumerate() {
        let year = 1920 + 20 * c as i32 + (j % 10) as i32;
        metadata.insert(
            format!("i{j:04}"),
            ItemMeta {
                title: format!("Item {j:04}"),
                labels: [concept_labels[c].clone()].into_iter().collect(),
                year: Some(year),
            },
        );
    }

    let mut user_concepts = Vec::with_capacity(config.n_users);
    let mut raw = Vec::new();
    for u in 0..config.n_users {
        let concept = rng.below(config.n_concepts);
        user_concepts.push(concept);
        let span = config.positives_per_user_max - config.positives_per_user_min + 1;
        let count = config.positives_per_user_min + rng.below(span);
        let mut chosen: BTreeSet<usize> = BTreeSet::new();
        let mut attempts = 0usize;
        while chosen.len() < count && attempts < count * 50 {
            attempts += 1;
            let item = if rng.next_f64() < config.noise {
                // off-concept draw
                rng.below(config.n_items)
            } else {
                let block = &block_items[concept];
                block[rng.below(block.len())]
            };
            chosen.insert(item);
        }
        for item in chosen {
            raw.push(RawInteraction {
                user_id: format!("u{u:04}"),
                item_id: format!("i{item:04}"),
                value: 1.0,
                timestamp: None,
            });
        }
    }

    Ok(SynthOutput {
        raw,
        metadata,
        ground_truth: GroundTruth {
            concept_labels,
            item_concepts,
            user_concepts,
        },
        config: config.clone(),
    })
}

/// Convenience: generate, build the dataset, and attach metadata.
pub fn planted_dataset(
    config: &SynthConfig,
    dataset_config: &DatasetConfig,
) -> Result<(InteractionDataset, GroundTruth)> {
    let out = generate_planted(config)?;
    let mut dataset = build_dataset(&out.raw, dataset_config, config.seed)?;
    dataset.attach_metadata(&out.metadata);
    Ok((dataset, out.ground_truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_respects_affinity_map() {
        let cfg = SynthConfig {
            n_users: 30,
            n_items: 40,
            n_concepts: 4,
            noise: 0.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let out = generate_planted(&cfg).unwrap();
        for r in &out.raw {
            let u: usize = r.user_id[1..].parse().unwrap();
            let i: usize = r.item_id[1..].parse().unwrap();
            assert_eq!(
                out.ground_truth.item_concepts[i],
                out.ground_truth.user_concepts[u],
                "off-concept positive at noise 0"
            );
        }
    }

    #[test]
    fn single_concept_means_one_block() {
        let cfg = SynthConfig {
            n_users: 10,
            n_items: 12,
            n_concepts: 1,
            noise: 0.0,
            positives_per_user_min: 5,
            positives_per_user_max: 8,
            seed: 1,
        };
        let out = generate_planted(&cfg).unwrap();
        assert!(out.ground_truth.item_concepts.iter().all(|&c| c == 0));
        assert!(out.ground_truth.user_concepts.iter().all(|&c| c == 0));
    }

    #[test]
    fn fixed_seed_reproduces_byte_identical_output() {
        let cfg = SynthConfig::default();
        let a = generate_planted(&cfg).unwrap();
        let b = generate_planted(&cfg).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(
            serde_json::to_string(&a.ground_truth).unwrap(),
            serde_json::to_string(&b.ground_truth).unwrap()
        );
    }

    #[test]
    fn planted_dataset_builds_with_metadata() {
        let (ds, truth) = planted_dataset(&SynthConfig::default(), &DatasetConfig::default())
            .unwrap();
        ds.check_invariants().unwrap();
        assert_eq!(truth.user_concepts.len(), 200);
        // every dataset item got its label attached
        assert!(ds.item_metadata.iter().all(Option::is_some));
        // concept decade encoding: c0 → 1920s, c3 → 1980s
        let meta = ds.item_metadata[0].as_ref().unwrap();
        assert!(meta.year.unwrap() >= 1920);
    }

    #[test]
    fn items_partition_into_equal_blocks() {
        let cfg = SynthConfig::default();
        let counts = (0..cfg.n_items)
            .map(|j| concept_of_item(j, cfg.n_items, cfg.n_concepts))
            .fold(vec![0usize; cfg.n_concepts], |mut acc, c| {
                acc[c] += 1;
                acc
            });
        assert_eq!(counts, vec![30, 30, 30, 30]);
    }
}
