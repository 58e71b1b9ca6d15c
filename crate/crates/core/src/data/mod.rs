//! Implicit-feedback dataset construction: dedup, dense indexing,
//! per-user holdout, validation carving, and popularity statistics.

mod loaders;
mod sampler;

use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use loaders::{
    load_lastfm, load_metadata, load_movielens, LastFmColumns, LoadReport,
};
pub use sampler::NegativeSampler;

/// One raw interaction event before index mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    /// Rating or play count; all rated items count as positives.
    pub value: f64,
    pub timestamp: Option<i64>,
}

impl RawInteraction {
    pub fn validate(&self) -> Result<()> {
        if self.user_id.is_empty() || self.item_id.is_empty() {
            return Err(Error::Data("empty user or item id".into()));
        }
        if self.value.is_nan() || self.value < 0.0 {
            return Err(Error::Data(format!(
                "negative or non-finite value {} for ({}, {})",
                self.value, self.user_id, self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One de-duplicated positive, tagged with its split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Positive {
    pub user: usize,
    pub item: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub title: String,
    pub labels: BTreeSet<String>,
    pub year: Option<i32>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Users with fewer total positives than this contribute no test items.
    pub min_user_positives: usize,
    /// Number of test positives held out per eligible user.
    pub holdout_per_user: usize,
    /// Fraction of training positives carved into the validation split.
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            min_user_positives: 6,
            holdout_per_user: 5,
            val_fraction: 0.05,
        }
    }
}

/// De-duplicated implicit-feedback dataset with dense indices.
///
/// `user_ids[u]` and `item_ids[i]` map dense indices back to raw ids;
/// `positives` is sorted by `(user, item)`. Popularity counts cover the
/// whole dataset, before splitting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub positives: Vec<Positive>,
    pub item_popularity: Vec<u32>,
    pub item_metadata: Vec<Option<ItemMeta>>,
    pub config: DatasetConfig,
    pub seed: u64,
}

impl InteractionDataset {
    /// Train-split item indices per user, each list sorted ascending.
    pub fn train_positives_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for p in &self.positives {
            if p.split == Split::Train {
                out[p.user].push(p.item);
            }
        }
        out
    }

    /// All positives per user regardless of split, sorted ascending.
    pub fn positives_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for p in &self.positives {
            out[p.user].push(p.item);
        }
        out
    }

    pub fn split_positives(&self, split: Split) -> impl Iterator<Item = &Positive> {
        self.positives.iter().filter(move |p| p.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split_positives(split).count()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }

    /// Users with at least one train-split positive.
    pub fn training_users(&self) -> Vec<usize> {
        let by_user = self.train_positives_by_user();
        (0..self.n_users).filter(|&u| !by_user[u].is_empty()).collect()
    }

    /// Attach sidecar metadata keyed by raw item id; returns how many
    /// dataset items were matched.
    pub fn attach_metadata(
        &mut self,
        meta: &std::collections::BTreeMap<String, ItemMeta>,
    ) -> usize {
        let mut matched = 0;
        for (idx, id) in self.item_ids.iter().enumerate() {
            if let Some(m) = meta.get(id) {
                self.item_metadata[idx] = Some(m.clone());
                matched += 1;
            }
        }
        matched
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.user_ids.len() != self.n_users || self.item_ids.len() != self.n_items {
            return Err(Error::Data("id map length mismatch".into()));
        }
        let mut seen = BTreeSet::new();
        let mut pop = vec![0u32; self.n_items];
        for p in &self.positives {
            if p.user >= self.n_users || p.item >= self.n_items {
                return Err(Error::Data(format!(
                    "positive ({}, {}) out of range",
                    p.user, p.item
                )));
            }
            if !seen.insert((p.user, p.item)) {
                return Err(Error::Data(format!(
                    "duplicate positive ({}, {})",
                    p.user, p.item
                )));
            }
            pop[p.item] += 1;
        }
        if pop != self.item_popularity {
            return Err(Error::Data("popularity counts inconsistent".into()));
        }
        Ok(())
    }
}

/// Dedup raw interactions, assign dense indices in order of first
/// appearance, hold out test positives per user, and carve validation.
pub fn build_dataset(
    raw: &[RawInteraction],
    config: &DatasetConfig,
    seed: u64,
) -> Result<InteractionDataset> {
    if raw.is_empty() {
        return Err(Error::Data("no interactions to build a dataset from".into()));
    }
    if config.min_user_positives <= config.holdout_per_user {
        return Err(Error::Config(format!(
            "min_user_positives ({}) must exceed holdout_per_user ({})",
            config.min_user_positives, config.holdout_per_user
        )));
    }
    if !(0.0..1.0).contains(&config.val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction {} outside [0, 1)",
            config.val_fraction
        )));
    }

    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();

    for r in raw {
        r.validate()?;
        let u = *user_index.entry(r.user_id.as_str()).or_insert_with(|| {
            user_ids.push(r.user_id.clone());
            user_ids.len() - 1
        });
        let i = *item_index.entry(r.item_id.as_str()).or_insert_with(|| {
            item_ids.push(r.item_id.clone());
            item_ids.len() - 1
        });
        pairs.insert((u, i));
    }

    let n_users = user_ids.len();
    let n_items = item_ids.len();

    let mut item_popularity = vec![0u32; n_items];
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    for &(u, i) in &pairs {
        item_popularity[i] += 1;
        by_user[u].push(i); // ascending: pairs is ordered
    }

    if by_user.iter().all(|v| v.len() < config.min_user_positives) {
        return Err(Error::Config(format!(
            "every user has fewer than {} positives; no test split possible",
            config.min_user_positives
        )));
    }

    let mut rng = Rng::seed_from_u64(seed);
    let mut split_of: HashMap<(usize, usize), Split> = HashMap::new();
    for (u, items) in by_user.iter().enumerate() {
        if items.len() >= config.min_user_positives {
            let mut order: Vec<usize> = items.clone();
            rng.shuffle(&mut order);
            for &i in order.iter().take(config.holdout_per_user) {
                split_of.insert((u, i), Split::Test);
            }
        }
    }

    // carve validation from the remaining training positives, globally
    let mut train_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|p| !split_of.contains_key(p))
        .collect();
    let n_val = (train_pairs.len() as f64 * config.val_fraction).floor() as usize;
    rng.shuffle(&mut train_pairs);
    for &p in train_pairs.iter().take(n_val) {
        split_of.insert(p, Split::Val);
    }

    let positives = pairs
        .iter()
        .map(|&(user, item)| Positive {
            user,
            item,
            split: split_of.get(&(user, item)).copied().unwrap_or(Split::Train),
        })
        .collect();

    Ok(InteractionDataset {
        n_users,
        n_items,
        user_ids,
        item_ids,
        positives,
        item_popularity,
        item_metadata: vec![None; n_items],
        config: *config,
        seed,
    })
}
