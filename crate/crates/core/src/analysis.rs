//! Monosemanticity measurement over a trained SAE: per-neuron top
//! activating items, semantic purity against item labels, popularity
//! percentiles, a weighted pairwise-similarity monosemanticity score,
//! and activation-profile data for plotting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, ItemMeta};
use crate::error::{Error, Result};
use crate::math::{dot, DenseMatrix};
use crate::rec::RecommenderModel;
use crate::sae::SaeModel;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

/// Bottleneck activations for every entity on one side: row per entity,
/// column per neuron.
pub fn neuron_activations<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    side: Side,
) -> Result<DenseMatrix<T>> {
    let table = match side {
        Side::User => model.user_embeddings(),
        Side::Item => model.item_embeddings(),
    };
    if table.cols() != sae.d() {
        return Err(Error::dim("neuron_activations", sae.d(), table.cols()));
    }
    let mut out = DenseMatrix::zeros(table.rows(), sae.m());
    for r in 0..table.rows() {
        let z = sae.encode(table.row(r))?;
        out.row_mut(r).copy_from_slice(&z);
    }
    Ok(out)
}

/// The `k` entities with the largest activation on `neuron`, ties broken
/// by ascending index.
pub fn top_activating<T: Scalar>(
    activations: &DenseMatrix<T>,
    neuron: usize,
    k: usize,
) -> Result<Vec<(usize, T)>> {
    if neuron >= activations.cols() {
        return Err(Error::Config(format!(
            "neuron {neuron} out of range (m = {})",
            activations.cols()
        )));
    }
    let mut items: Vec<(usize, T)> = (0..activations.rows())
        .map(|r| (r, activations.get(r, neuron)))
        .collect();
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite activations")
            .then(a.0.cmp(&b.0))
    });
    items.truncate(k);
    Ok(items)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PurityResult {
    /// Fraction of the top items whose label set contains the label.
    pub purity: f64,
    /// Items lacking metadata, counted as non-matching.
    pub missing_metadata: usize,
}

/// Fraction of top items matching `label` (any of an item's labels may
/// match). Items without metadata count as non-matching.
pub fn semantic_purity<T: Scalar>(
    top_items: &[(usize, T)],
    label: &str,
    metadata: &[Option<ItemMeta>],
) -> PurityResult {
    if top_items.is_empty() {
        return PurityResult {
            purity: 0.0,
            missing_metadata: 0,
        };
    }
    let mut matching = 0usize;
    let mut missing = 0usize;
    for &(item, _) in top_items {
        match metadata.get(item).and_then(Option::as_ref) {
            Some(meta) => {
                if meta.labels.contains(label) {
                    matching += 1;
                }
            }
            None => missing += 1,
        }
    }
    PurityResult {
        purity: matching as f64 / top_items.len() as f64,
        missing_metadata: missing,
    }
}

/// Popularity percentiles as distance from the top of the popularity
/// ranking: `(midrank + 0.5) / n`, so values near 0 mean the most
/// popular items and ties share their average rank.
pub fn popularity_top_distance(item_popularity: &[u32]) -> Vec<f64> {
    let n = item_popularity.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| item_popularity[b].cmp(&item_popularity[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let mut end = pos;
        while end + 1 < n && item_popularity[order[end + 1]] == item_popularity[order[pos]] {
            end += 1;
        }
        let midrank = (pos + end) as f64 / 2.0;
        for &i in &order[pos..=end] {
            out[i] = (midrank + 0.5) / n as f64;
        }
        pos = end + 1;
    }
    out
}

/// Mean popularity top-distance of the first `k` top items (lower means
/// more popular).
pub fn popularity_percentile<T: Scalar>(
    top_items: &[(usize, T)],
    item_popularity: &[u32],
    k: usize,
) -> f64 {
    let distances = popularity_top_distance(item_popularity);
    let take = k.min(top_items.len());
    if take == 0 {
        return 0.0;
    }
    top_items[..take]
        .iter()
        .map(|&(item, _)| distances[item])
        .sum::<f64>()
        / take as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonosemanticityReport<T> {
    /// `None` for neurons with fewer than two active top items.
    pub per_neuron: Vec<Option<T>>,
    /// Mean over scored neurons.
    pub aggregate: T,
    pub skipped: usize,
    pub top_t: usize,
}

/// Weighted pairwise cosine similarity among each neuron's top-`top_t`
/// activating items, weights proportional to activations. Neurons with
/// fewer than two active items are skipped.
pub fn monosemanticity_score<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    top_t: usize,
) -> Result<MonosemanticityReport<T>> {
    let activations = neuron_activations(sae, model, Side::Item)?;
    let embeddings = model.item_embeddings();
    let mut per_neuron = Vec::with_capacity(sae.m());
    let mut sum = T::zero();
    let mut scored = 0usize;
    for j in 0..sae.m() {
        let top = top_activating(&activations, j, top_t)?;
        let active: Vec<(usize, T)> = top.into_iter().filter(|&(_, a)| a > T::zero()).collect();
        if active.len() < 2 {
            per_neuron.push(None);
            continue;
        }
        let total: T = active.iter().map(|&(_, a)| a).sum();
        let weights: Vec<T> = active.iter().map(|&(_, a)| a / total).collect();
        // unit-normalized embeddings; zero vectors contribute zero cosine
        let units: Vec<Vec<T>> = active
            .iter()
            .map(|&(i, _)| {
                let e = embeddings.row(i);
                let norm = dot(e, e).sqrt();
                if norm > T::zero() {
                    e.iter().map(|&v| v / norm).collect()
                } else {
                    vec![T::zero(); e.len()]
                }
            })
            .collect();
        // Σ_{a<b} w_a w_b cos_ab = (‖Σ w û‖² − Σ w²‖û‖²) / 2
        let d = embeddings.cols();
        let mut weighted_sum = vec![T::zero(); d];
        let mut self_term = T::zero();
        let mut w_sq = T::zero();
        for (w, u) in weights.iter().zip(&units) {
            for (s, &uk) in weighted_sum.iter_mut().zip(u) {
                *s = *s + *w * uk;
            }
            self_term = self_term + *w * *w * dot(u, u);
            w_sq = w_sq + *w * *w;
        }
        let numer = (dot(&weighted_sum, &weighted_sum) - self_term) / lit::<T>(2.0);
        let w_total: T = weights.iter().copied().sum();
        let denom = (w_total * w_total - w_sq) / lit::<T>(2.0);
        if denom <= T::zero() {
            per_neuron.push(None);
            continue;
        }
        let score = numer / denom;
        per_neuron.push(Some(score));
        sum = sum + score;
        scored += 1;
    }
    let aggregate = if scored > 0 {
        sum / lit::<T>(scored as f64)
    } else {
        T::zero()
    };
    Ok(MonosemanticityReport {
        per_neuron,
        aggregate,
        skipped: sae.m() - scored,
        top_t,
    })
}

/// Mean activation per neuron over items carrying a label, with the
/// catalog-wide baseline per neuron.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelProfile<T> {
    pub label: String,
    pub mean_activation: Vec<T>,
    pub baseline: Vec<T>,
    pub n_label_items: usize,
}

pub fn label_activation_profile<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    metadata: &[Option<ItemMeta>],
    label: &str,
) -> Result<LabelProfile<T>> {
    if label.is_empty() {
        return Err(Error::Config("empty label".into()));
    }
    let activations = neuron_activations(sae, model, Side::Item)?;
    let n = activations.rows();
    let m = activations.cols();
    let mut label_sum = vec![T::zero(); m];
    let mut base_sum = vec![T::zero(); m];
    let mut n_label = 0usize;
    for i in 0..n {
        let row = activations.row(i);
        for (b, &z) in base_sum.iter_mut().zip(row) {
            *b = *b + z;
        }
        let has = metadata
            .get(i)
            .and_then(Option::as_ref)
            .is_some_and(|meta| meta.labels.contains(label));
        if has {
            n_label += 1;
            for (l, &z) in label_sum.iter_mut().zip(row) {
                *l = *l + z;
            }
        }
    }
    if n_label == 0 {
        return Err(Error::Data(format!("no items carry label '{label}'")));
    }
    let nl = lit::<T>(n_label as f64);
    let nn = lit::<T>(n as f64);
    Ok(LabelProfile {
        label: label.to_owned(),
        mean_activation: label_sum.into_iter().map(|s| s / nl).collect(),
        baseline: base_sum.into_iter().map(|s| s / nn).collect(),
        n_label_items: n_label,
    })
}

/// Mean activation of one neuron per label, over items carrying each
/// label; labels sorted for deterministic output.
pub fn neuron_label_profile<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    metadata: &[Option<ItemMeta>],
    neuron: usize,
) -> Result<Vec<(String, T)>> {
    if neuron >= sae.m() {
        return Err(Error::Config(format!("neuron {neuron} out of range")));
    }
    let activations = neuron_activations(sae, model, Side::Item)?;
    let mut sums: BTreeMap<&str, (T, usize)> = BTreeMap::new();
    for i in 0..activations.rows() {
        if let Some(meta) = metadata.get(i).and_then(Option::as_ref) {
            let z = activations.get(i, neuron);
            for label in &meta.labels {
                let entry = sums.entry(label).or_insert((T::zero(), 0));
                entry.0 = entry.0 + z;
                entry.1 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(label, (sum, count))| (label.to_owned(), sum / lit::<T>(count as f64)))
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemporalHistogram {
    /// Decade start year (e.g. 1990) → count among the top-k items.
    pub decades: BTreeMap<i32, usize>,
    /// Top items without a known year, excluded from the buckets.
    pub missing_year: usize,
    pub k: usize,
}

/// Decade histogram of a neuron's top-`k` activating items.
pub fn temporal_profile<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    metadata: &[Option<ItemMeta>],
    neuron: usize,
    k: usize,
) -> Result<TemporalHistogram> {
    let activations = neuron_activations(sae, model, Side::Item)?;
    let top = top_activating(&activations, neuron, k)?;
    let mut decades = BTreeMap::new();
    let mut missing = 0usize;
    for &(item, _) in &top {
        match metadata
            .get(item)
            .and_then(Option::as_ref)
            .and_then(|m| m.year)
        {
            Some(year) => {
                let decade = year.div_euclid(10) * 10;
                *decades.entry(decade).or_insert(0) += 1;
            }
            None => missing += 1,
        }
    }
    Ok(TemporalHistogram {
        decades,
        missing_year: missing,
        k,
    })
}

/// Everything the neuron export and purity tables need, per neuron.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeuronReport<T> {
    pub neuron_index: usize,
    /// Ranked (item index, activation), length up to `k_max`.
    pub top_items: Vec<(usize, T)>,
    pub assigned_label: Option<String>,
    /// K → purity for the assigned label; empty without a label.
    pub purity_at: BTreeMap<usize, f64>,
    /// K → mean popularity top-distance of the top-K items.
    pub popularity_percentile_at: BTreeMap<usize, f64>,
    pub monosemanticity: Option<T>,
}

/// Build one report per neuron over the item side.
pub fn neuron_reports<T: Scalar>(
    sae: &SaeModel<T>,
    model: &RecommenderModel<T>,
    dataset: &InteractionDataset,
    labels: &BTreeMap<usize, String>,
    ks: &[usize],
    k_max: usize,
    top_t: usize,
) -> Result<Vec<NeuronReport<T>>> {
    let activations = neuron_activations(sae, model, Side::Item)?;
    let mono = monosemanticity_score(sae, model, top_t)?;
    let list_len = k_max.max(ks.iter().copied().max().unwrap_or(0));
    let mut out = Vec::with_capacity(sae.m());
    for j in 0..sae.m() {
        let top_items = top_activating(&activations, j, list_len)?;
        let assigned_label = labels.get(&j).cloned();
        let mut purity_at = BTreeMap::new();
        if let Some(label) = &assigned_label {
            for &k in ks {
                let take = k.min(top_items.len());
                let p = semantic_purity(&top_items[..take], label, &dataset.item_metadata);
                purity_at.insert(k, p.purity);
            }
        }
        let mut popularity_percentile_at = BTreeMap::new();
        for &k in ks {
            popularity_percentile_at.insert(
                k,
                popularity_percentile(&top_items, &dataset.item_popularity, k),
            );
        }
        out.push(NeuronReport {
            neuron_index: j,
            top_items,
            assigned_label,
            purity_at,
            popularity_percentile_at,
            monosemanticity: mono.per_neuron[j],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rec::RecommenderKind;
    use crate::rng::Rng;
    use std::collections::BTreeSet;

    fn meta(labels: &[&str], year: Option<i32>) -> Option<ItemMeta> {
        Some(ItemMeta {
            title: "t".into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            year,
        })
    }

    fn model_with_items(items: Vec<Vec<f64>>) -> RecommenderModel<f64> {
        let d = items[0].len();
        RecommenderModel::from_parts(
            RecommenderKind::Mf,
            DenseMatrix::zeros(2, d),
            DenseMatrix::from_rows(&items).unwrap(),
            Vec::new(),
        )
        .unwrap()
    }

    fn sae(w: Vec<Vec<f64>>) -> SaeModel<f64> {
        let d = w[0].len();
        let m = w.len();
        SaeModel::from_parts(
            DenseMatrix::from_rows(&w).unwrap(),
            vec![0.0; m],
            vec![0.0; d],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_sae_gives_zero_activations() {
        let model = model_with_items(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let s = sae(vec![vec![0.0, 0.0]; 3]);
        let acts = neuron_activations(&s, &model, Side::Item).unwrap();
        assert!(acts.data().iter().all(|&z| z == 0.0));
        assert_eq!(acts.rows(), 2);
        assert_eq!(acts.cols(), 3);
    }

    #[test]
    fn activations_match_single_encode() {
        let model = model_with_items(vec![vec![0.3, -0.7], vec![1.5, 0.2]]);
        let s = sae(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        let acts = neuron_activations(&s, &model, Side::Item).unwrap();
        for i in 0..2 {
            let z = s.encode(model.item_embedding(i)).unwrap();
            assert_eq!(acts.row(i), &z[..]);
        }
    }

    #[test]
    fn user_side_has_user_rows() {
        let model = RecommenderModel::<f64>::new_mf(7, 3, 2, 1);
        let s = sae(vec![vec![1.0, 0.0]]);
        assert_eq!(
            neuron_activations(&s, &model, Side::User).unwrap().rows(),
            7
        );
        assert_eq!(
            neuron_activations(&s, &model, Side::Item).unwrap().rows(),
            3
        );
    }

    #[test]
    fn top_activating_edges_and_oracle() {
        let acts =
            DenseMatrix::from_rows(&[vec![0.5], vec![0.5], vec![0.9], vec![0.1]]).unwrap();
        assert!(top_activating(&acts, 0, 0).unwrap().is_empty());
        // ties by ascending index
        let top = top_activating(&acts, 0, 3).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![2, 0, 1]);

        // random instance against a full-sort oracle
        let mut rng = Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.uniform(0.0, 1.0)]).collect();
        let acts = DenseMatrix::from_rows(&rows).unwrap();
        let got = top_activating(&acts, 0, 4).unwrap();
        let mut oracle: Vec<(usize, f64)> =
            rows.iter().enumerate().map(|(i, r)| (i, r[0])).collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got, oracle[..4].to_vec());
    }

    #[test]
    fn all_equal_activations_take_first_indices() {
        let acts = DenseMatrix::from_rows(&vec![vec![0.5]; 6]).unwrap();
        let top = top_activating(&acts, 0, 3).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn top_k_plus_one_extends_top_k() {
        let mut rng = Rng::seed_from_u64(14);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.uniform(0.0, 1.0)]).collect();
        let acts = DenseMatrix::from_rows(&rows).unwrap();
        for k in 0..19 {
            let a = top_activating(&acts, 0, k).unwrap();
            let b = top_activating(&acts, 0, k + 1).unwrap();
            assert_eq!(&b[..k], &a[..]);
        }
    }

    #[test]
    fn purity_counts_matches() {
        let metadata: Vec<Option<ItemMeta>> = (0..10)
            .map(|i| {
                if i < 9 {
                    meta(&["Horror"], None)
                } else {
                    meta(&["Comedy"], None)
                }
            })
            .collect();
        let top: Vec<(usize, f64)> = (0..10).map(|i| (i, 1.0)).collect();
        let p = semantic_purity(&top, "Horror", &metadata);
        assert!((p.purity - 0.9).abs() < 1e-12);
        assert_eq!(p.missing_metadata, 0);
    }

    #[test]
    fn purity_missing_metadata_counts_as_miss() {
        let metadata: Vec<Option<ItemMeta>> = vec![meta(&["A"], None), None];
        let top = vec![(0usize, 1.0f64), (1, 0.5)];
        let p = semantic_purity(&top, "A", &metadata);
        assert_eq!(p.purity, 0.5);
        assert_eq!(p.missing_metadata, 1);
    }

    #[test]
    fn purity_monotone_under_label_superset() {
        let mut rng = Rng::seed_from_u64(20);
        for _ in 0..50 {
            let n = 8;
            let mut metadata: Vec<Option<ItemMeta>> = (0..n)
                .map(|_| {
                    let mut labels = BTreeSet::new();
                    if rng.next_f64() < 0.5 {
                        labels.insert("X".to_string());
                    }
                    if rng.next_f64() < 0.5 {
                        labels.insert("Y".to_string());
                    }
                    Some(ItemMeta {
                        title: "t".into(),
                        labels,
                        year: None,
                    })
                })
                .collect();
            let top: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
            let before = semantic_purity(&top, "X", &metadata).purity;
            let pick = rng.below(n);
            if let Some(m) = metadata[pick].as_mut() {
                m.labels.insert("X".to_string());
            }
            let after = semantic_purity(&top, "X", &metadata).purity;
            assert!(after >= before);
        }
    }

    #[test]
    fn popularity_top_distance_exact_rank_arithmetic() {
        // distinct popularities: top-K are exactly the K most popular
        let pop: Vec<u32> = vec![50, 40, 30, 20, 10, 5, 4, 3, 2, 1];
        let n = pop.len();
        for k in [1usize, 3, 5] {
            let top: Vec<(usize, f64)> = (0..k).map(|i| (i, 1.0)).collect();
            let got = popularity_percentile(&top, &pop, k);
            let want = k as f64 / (2.0 * n as f64);
            assert!((got - want).abs() < 1e-12, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn popularity_median_item_is_half() {
        let pop: Vec<u32> = vec![9, 7, 5, 3, 1]; // item 2 is the median
        let got = popularity_percentile(&[(2usize, 1.0f64)], &pop, 1);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn popularity_ties_take_midrank() {
        let pop: Vec<u32> = vec![5, 5, 5];
        let d = popularity_top_distance(&pop);
        for &x in &d {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn monosemanticity_parallel_items_score_one() {
        let items: Vec<Vec<f64>> = (1..=5).map(|k| vec![k as f64, 0.0]).collect();
        let model = model_with_items(items);
        let s = sae(vec![vec![1.0, 0.0]]);
        let report = monosemanticity_score(&s, &model, 5).unwrap();
        assert!((report.per_neuron[0].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monosemanticity_orthogonal_items_score_zero() {
        let items = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let model = model_with_items(items);
        let s = sae(vec![vec![1.0, 1.0]]);
        let report = monosemanticity_score(&s, &model, 2).unwrap();
        assert!(report.per_neuron[0].unwrap().abs() < 1e-12);
    }

    #[test]
    fn monosemanticity_matches_brute_force_pairs() {
        let items = vec![
            vec![1.0, 0.2, -0.3],
            vec![0.8, -0.1, 0.5],
            vec![-0.2, 0.9, 0.4],
            vec![0.3, 0.3, 0.3],
        ];
        let model = model_with_items(items.clone());
        let s = sae(vec![vec![0.7, 0.2, 0.4]]);
        let report = monosemanticity_score(&s, &model, 4).unwrap();

        // brute force over all pairs
        let acts = neuron_activations(&s, &model, Side::Item).unwrap();
        let top = top_activating(&acts, 0, 4).unwrap();
        let active: Vec<(usize, f64)> = top.into_iter().filter(|t| t.1 > 0.0).collect();
        let total: f64 = active.iter().map(|t| t.1).sum();
        let w: Vec<f64> = active.iter().map(|t| t.1 / total).collect();
        let cos = |a: &[f64], b: &[f64]| {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            dot(a, b) / (na * nb)
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let c = cos(&items[active[a].0], &items[active[b].0]);
                num += w[a] * w[b] * c;
                den += w[a] * w[b];
            }
        }
        let expected = num / den;
        assert!(
            (report.per_neuron[0].unwrap() - expected).abs() < 1e-12,
            "{} vs {expected}",
            report.per_neuron[0].unwrap()
        );
    }

    #[test]
    fn monosemanticity_invariant_to_positive_rescaling() {
        let items = vec![
            vec![1.0, 0.2, -0.3],
            vec![0.8, -0.1, 0.5],
            vec![-0.2, 0.9, 0.4],
        ];
        let scaled: Vec<Vec<f64>> = items
            .iter()
            .map(|r| r.iter().map(|&v| v * 3.7).collect())
            .collect();
        let s = sae(vec![vec![0.7, 0.2, 0.4]]);
        let a = monosemanticity_score(&s, &model_with_items(items), 3).unwrap();
        let b = monosemanticity_score(&s, &model_with_items(scaled), 3).unwrap();
        assert!((a.per_neuron[0].unwrap() - b.per_neuron[0].unwrap()).abs() < 1e-9);
    }

    #[test]
    fn monosemanticity_skips_underactive_neurons() {
        let items = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
        let model = model_with_items(items);
        // neuron 1 never activates (negative weights)
        let s = sae(vec![vec![1.0, 0.0], vec![-1.0, -1.0]]);
        let report = monosemanticity_score(&s, &model, 2).unwrap();
        assert!(report.per_neuron[0].is_some());
        assert!(report.per_neuron[1].is_none());
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn label_profile_all_items_equals_baseline() {
        let model = model_with_items(vec![vec![0.5, 0.1], vec![0.2, 0.9]]);
        let s = sae(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let metadata = vec![meta(&["All"], None), meta(&["All"], None)];
        let p = label_activation_profile(&s, &model, &metadata, "All").unwrap();
        for (a, b) in p.mean_activation.iter().zip(&p.baseline) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_construction_recovers_planted_mapping() {
        // items of concept c sit on basis direction c; the identity SAE
        // maps direction c to neuron c, so each label's profile must
        // peak at its planted neuron
        let mut items = Vec::new();
        let mut metadata = Vec::new();
        for c in 0..4usize {
            for k in 0..3usize {
                let mut e = vec![0.0; 4];
                e[c] = 1.0 + 0.1 * k as f64;
                items.push(e);
                metadata.push(meta(&[&format!("c{c}")], None));
            }
        }
        let model = model_with_items(items);
        let eye: Vec<Vec<f64>> = (0..4)
            .map(|r| (0..4).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        let s = sae(eye);
        for c in 0..4usize {
            let profile =
                label_activation_profile(&s, &model, &metadata, &format!("c{c}")).unwrap();
            let peak = profile
                .mean_activation
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, c, "planted mapping broken for concept {c}");
        }
    }

    #[test]
    fn label_profile_unknown_label_errors() {
        let model = model_with_items(vec![vec![0.5, 0.1]]);
        let s = sae(vec![vec![1.0, 0.0]]);
        let metadata = vec![meta(&["X"], None)];
        assert!(label_activation_profile(&s, &model, &metadata, "Nope").is_err());
        assert!(label_activation_profile(&s, &model, &metadata, "").is_err());
    }

    #[test]
    fn temporal_profile_buckets_by_decade() {
        let items = vec![
            vec![3.0, 0.0],
            vec![2.5, 0.0],
            vec![2.0, 0.0],
            vec![1.5, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.0],
        ];
        let model = model_with_items(items);
        let s = sae(vec![vec![1.0, 0.0]]);
        let metadata = vec![
            meta(&[], Some(1994)),
            meta(&[], Some(1991)),
            meta(&[], Some(1985)),
            meta(&[], None),
            meta(&[], Some(1999)),
            meta(&[], Some(2003)),
        ];
        let h = temporal_profile(&s, &model, &metadata, 0, 5).unwrap();
        // top 5 by activation are items 0..4; item 3 has no year
        assert_eq!(h.missing_year, 1);
        assert_eq!(h.decades.get(&1990), Some(&3));
        assert_eq!(h.decades.get(&1980), Some(&1));
        assert_eq!(h.decades.get(&2000), None);
    }

    #[test]
    fn single_decade_when_all_items_in_it() {
        let items = vec![vec![2.0, 0.0], vec![1.0, 0.0]];
        let model = model_with_items(items);
        let s = sae(vec![vec![1.0, 0.0]]);
        let metadata = vec![meta(&[], Some(1993)), meta(&[], Some(1997))];
        let h = temporal_profile(&s, &model, &metadata, 0, 2).unwrap();
        assert_eq!(h.decades.len(), 1);
        assert_eq!(h.decades[&1990], 2);
    }
}
