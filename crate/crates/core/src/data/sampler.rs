//! Popularity-proportional negative sampling.

use std::collections::HashSet;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draws negatives with probability proportional to item popularity,
/// restricted to items outside the user's training positives.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    train_positives: Vec<HashSet<usize>>,
    rng: Rng,
}

const REJECTION_ATTEMPTS: usize = 32;

impl NegativeSampler {
    pub fn from_dataset(dataset: &InteractionDataset, seed: u64) -> Result<Self> {
        let popularity: Vec<f64> = dataset.item_popularity.iter().map(|&c| c as f64).collect();
        let by_user = dataset
            .train_positives_by_user()
            .into_iter()
            .map(|v| v.into_iter().collect())
            .collect();
        Self::from_parts(&popularity, by_user, seed)
    }

    /// Build from explicit popularity counts and per-user exclusion sets.
    pub fn from_parts(
        popularity: &[f64],
        train_positives: Vec<HashSet<usize>>,
        seed: u64,
    ) -> Result<Self> {
        if popularity.is_empty() {
            return Err(Error::Config("negative sampler over empty catalog".into()));
        }
        if popularity.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Config("popularity weights must be non-negative".into()));
        }
        let total: f64 = popularity.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("popularity weights sum to zero".into()));
        }
        let weights: Vec<f64> = popularity.iter().map(|&w| w / total).collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(NegativeSampler {
            weights,
            cumulative,
            train_positives,
            rng: Rng::seed_from_u64(seed),
        })
    }

    /// Normalized sampling weights (sum to 1).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_items(&self) -> usize {
        self.weights.len()
    }

    fn draw_global(&mut self) -> usize {
        let x = self.rng.next_f64();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&x).unwrap())
        {
            Ok(i) => i + 1,
            Err(i) => i,
        }
        .min(self.weights.len() - 1)
    }

    /// Draw `k` negatives for `user` (i.i.d. draws). Rejection-samples the
    /// global categorical, falling back to an exact restricted draw so the
    /// result follows popularity renormalized over eligible items — or the
    /// uniform distribution over them when all eligible weights are zero.
    pub fn sample_negatives(&mut self, user: usize, k: usize) -> Result<Vec<usize>> {
        let excluded = self
            .train_positives
            .get(user)
            .ok_or_else(|| Error::Data(format!("unknown user index {user}")))?;
        let eligible = self.n_items() - excluded.len();
        if eligible == 0 {
            return Err(Error::Data(format!(
                "user {user} has no eligible negative items"
            )));
        }
        if k > eligible {
            return Err(Error::Data(format!(
                "requested {k} negatives but only {eligible} items are eligible for user {user}"
            )));
        }
        let mut out = Vec::with_capacity(k);
        'draws: for _ in 0..k {
            for _ in 0..REJECTION_ATTEMPTS {
                let item = self.draw_global();
                if !self.train_positives[user].contains(&item) {
                    out.push(item);
                    continue 'draws;
                }
            }
            out.push(self.draw_restricted(user));
        }
        Ok(out)
    }

    fn draw_restricted(&mut self, user: usize) -> usize {
        let excluded = &self.train_positives[user];
        let items: Vec<usize> = (0..self.n_items())
            .filter(|i| !excluded.contains(i))
            .collect();
        let total: f64 = items.iter().map(|&i| self.weights[i]).sum();
        if total <= 0.0 {
            // all eligible items have zero popularity: fall back to uniform
            return items[self.rng.below(items.len())];
        }
        let x = self.rng.next_f64() * total;
        let mut acc = 0.0;
        for &i in &items {
            acc += self.weights[i];
            if x < acc {
                return i;
            }
        }
        *items.last().unwrap()
    }
}
