//! Recommendation-fidelity metrics between the original model and its
//! SAE-reconstructed counterpart: rank-biased overlap and Kendall tau
//! over top-N lists, plus the β-sweep harness.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::analysis::monosemanticity_score;
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::rec::{ranked_items, RecommenderModel};
use crate::sae::{train_sae, SaePair, SaeTrainConfig};
use crate::scalar::{lit, Scalar};

/// Extrapolated rank-biased overlap at depth `min(|a|, |b|)` with
/// persistence `p`. 1 for identical lists, 0 for disjoint ones.
pub fn rbo<X: Eq + Hash>(a: &[X], b: &[X], p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Config(format!("persistence {p} outside (0, 1)")));
    }
    let k = a.len().min(b.len());
    if k == 0 {
        return Err(Error::Data("rbo over an empty list".into()));
    }
    let distinct =
        |xs: &[X]| xs.iter().take(k).collect::<HashSet<_>>().len() == k;
    if !distinct(a) || !distinct(b) {
        return Err(Error::Data("rbo lists contain duplicates".into()));
    }
    // incremental overlap: X_d = |a[..d] ∩ b[..d]|
    let mut seen_a: HashSet<&X> = HashSet::with_capacity(k);
    let mut seen_b: HashSet<&X> = HashSet::with_capacity(k);
    let mut overlap = 0usize;
    let mut sum = 0.0;
    let mut p_pow = 1.0;
    let mut final_agreement = 0.0;
    for d in 1..=k {
        let xa = &a[d - 1];
        let xb = &b[d - 1];
        if xa == xb {
            overlap += 1;
        } else {
            if seen_b.contains(xa) {
                overlap += 1;
            }
            if seen_a.contains(xb) {
                overlap += 1;
            }
            seen_a.insert(xa);
            seen_b.insert(xb);
        }
        p_pow *= p;
        let agreement = overlap as f64 / d as f64;
        sum += agreement * p_pow;
        if d == k {
            final_agreement = agreement;
        }
    }
    Ok(final_agreement * p_pow + (1.0 - p) / p * sum)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KendallTau {
    pub tau: f64,
    /// Size of the item intersection the statistic was computed over.
    pub shared: usize,
}

fn count_inversions(perm: &mut [usize]) -> usize {
    // merge-sort inversion counting
    let n = perm.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = perm.split_at_mut(mid);
    let mut inv = count_inversions(left) + count_inversions(right);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            inv += left.len() - i;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    perm.copy_from_slice(&merged);
    inv
}

/// Kendall tau over the intersection of the two ranked lists:
/// `(concordant − discordant) / C(n, 2)`.
pub fn kendall_tau<X: Eq + Hash>(a: &[X], b: &[X]) -> Result<KendallTau> {
    let set_b: std::collections::HashMap<&X, usize> =
        b.iter().enumerate().map(|(r, x)| (x, r)).collect();
    if set_b.len() != b.len() {
        return Err(Error::Data("kendall_tau list contains duplicates".into()));
    }
    let mut b_ranks: Vec<usize> = Vec::new();
    let mut seen = HashSet::new();
    for x in a {
        if !seen.insert(x) {
            return Err(Error::Data("kendall_tau list contains duplicates".into()));
        }
        if let Some(&r) = set_b.get(x) {
            b_ranks.push(r);
        }
    }
    let n = b_ranks.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "kendall_tau needs ≥ 2 shared items, got {n}"
        )));
    }
    let inversions = count_inversions(&mut b_ranks);
    let pairs = n * (n - 1) / 2;
    let tau = 1.0 - 2.0 * inversions as f64 / pairs as f64;
    Ok(KendallTau { tau, shared: n })
}

/// User and item tables passed through `decode(encode(·))` once, so
/// repeated rankings in the reconstructed world are cheap.
pub struct ReconstructedWorld<T> {
    pub user_table: DenseMatrix<T>,
    pub item_table: DenseMatrix<T>,
}

pub fn reconstruct_world<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
) -> Result<ReconstructedWorld<T>> {
    let rebuild = |table: &DenseMatrix<T>, sae: &crate::sae::SaeModel<T>| -> Result<DenseMatrix<T>> {
        let mut out = DenseMatrix::zeros(table.rows(), table.cols());
        for r in 0..table.rows() {
            let rec = sae.reconstruct(table.row(r), None)?;
            out.row_mut(r).copy_from_slice(&rec);
        }
        Ok(out)
    };
    Ok(ReconstructedWorld {
        user_table: rebuild(model.user_embeddings(), saes.user())?,
        item_table: rebuild(model.item_embeddings(), saes.item())?,
    })
}

/// Top-`n` items for `user` with both towers replaced by their SAE
/// reconstructions, ranked through the frozen scorer.
pub fn reconstructed_top_n<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
    user: usize,
    n: usize,
) -> Result<Vec<usize>> {
    let world = reconstruct_world(model, saes)?;
    Ok(world.top_n(model, user, n))
}

impl<T: Scalar> ReconstructedWorld<T> {
    pub fn top_n(&self, model: &RecommenderModel<T>, user: usize, n: usize) -> Vec<usize> {
        let scores = model.score_against(self.user_table.row(user), &self.item_table);
        ranked_items(&scores, &[], n)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserFidelity {
    pub user: usize,
    pub rbo: f64,
    /// `None` when fewer than two items were shared between the lists.
    pub kendall_tau: Option<f64>,
    pub shared: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityResult {
    pub per_user: Vec<UserFidelity>,
    pub rbo_mean: f64,
    pub rbo_std: f64,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub list_depth: usize,
    pub persistence: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Compare original and reconstructed top-`depth` lists for each user
/// (or a subset); both lists rank the full catalog.
pub fn fidelity<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
    users: Option<&[usize]>,
    depth: usize,
    persistence: f64,
) -> Result<FidelityResult> {
    let world = reconstruct_world(model, saes)?;
    let all_users: Vec<usize> = match users {
        Some(u) => u.to_vec(),
        None => (0..model.n_users()).collect(),
    };
    let mut per_user = Vec::with_capacity(all_users.len());
    let mut rbos = Vec::with_capacity(all_users.len());
    let mut taus = Vec::new();
    for &u in &all_users {
        if u >= model.n_users() {
            return Err(Error::Data(format!("user {u} out of range")));
        }
        let original = model.top_n(u, depth, &[]);
        let reconstructed = world.top_n(model, u, depth);
        let r = rbo(&original, &reconstructed, persistence)?;
        let tau = kendall_tau(&original, &reconstructed).ok();
        rbos.push(r);
        if let Some(kt) = &tau {
            taus.push(kt.tau);
        }
        per_user.push(UserFidelity {
            user: u,
            rbo: r,
            kendall_tau: tau.as_ref().map(|kt| kt.tau),
            shared: tau.map_or(0, |kt| kt.shared),
        });
    }
    let (rbo_mean, rbo_std) = mean_std(&rbos);
    let (tau_mean, tau_std) = mean_std(&taus);
    Ok(FidelityResult {
        per_user,
        rbo_mean,
        rbo_std,
        tau_mean,
        tau_std,
        list_depth: depth,
        persistence,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    /// `None` marks the aggregate row over all seeds for this β.
    pub seed: Option<u64>,
    pub rbo_mean: f64,
    pub rbo_std: f64,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub monosemanticity: f64,
    pub active_neuron_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Train one SAE per (β, seed), measure fidelity and monosemanticity,
/// and tabulate per-seed rows plus one aggregate row per β.
#[allow(clippy::too_many_arguments)]
pub fn beta_sweep<T: Scalar>(
    dataset: &InteractionDataset,
    model: &RecommenderModel<T>,
    betas: &[f64],
    base: &SaeTrainConfig<T>,
    seeds: &[u64],
    depth: usize,
    persistence: f64,
    fidelity_users: Option<&[usize]>,
) -> Result<SweepTable> {
    if betas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("beta_sweep needs ≥ 1 beta and ≥ 1 seed".into()));
    }
    let mut rows = Vec::new();
    for &beta in betas {
        let mut seed_rows: Vec<SweepRow> = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.loss.beta = lit(beta);
            cfg.seed = seed;
            let (saes, report) = train_sae(model, dataset, &cfg).map_err(|e| {
                Error::Numeric(format!("sweep training failed at beta {beta}, seed {seed}: {e}"))
            })?;
            let fid = fidelity(model, &saes, fidelity_users, depth, persistence)?;
            let mono = monosemanticity_score(saes.item(), model, 30)?;
            let active = report
                .epochs
                .last()
                .map(|e| {
                    let fracs: Vec<f64> = e
                        .neuron_stats
                        .iter()
                        .map(|s| 1.0 - s.dead_fraction.to_f64().unwrap_or(0.0))
                        .collect();
                    fracs.iter().sum::<f64>() / fracs.len() as f64
                })
                .unwrap_or(0.0);
            seed_rows.push(SweepRow {
                beta,
                seed: Some(seed),
                rbo_mean: fid.rbo_mean,
                rbo_std: fid.rbo_std,
                tau_mean: fid.tau_mean,
                tau_std: fid.tau_std,
                monosemanticity: mono.aggregate.to_f64().unwrap_or(0.0),
                active_neuron_fraction: active,
            });
        }
        let n = seed_rows.len() as f64;
        let mean = |f: fn(&SweepRow) -> f64| seed_rows.iter().map(f).sum::<f64>() / n;
        let aggregate = SweepRow {
            beta,
            seed: None,
            rbo_mean: mean(|r| r.rbo_mean),
            rbo_std: mean(|r| r.rbo_std),
            tau_mean: mean(|r| r.tau_mean),
            tau_std: mean(|r| r.tau_std),
            monosemanticity: mean(|r| r.monosemanticity),
            active_neuron_fraction: mean(|r| r.active_neuron_fraction),
        };
        rows.extend(seed_rows);
        rows.push(aggregate);
    }
    Ok(SweepTable { rows })
}
