//! Implicit-feedback training: binary cross-entropy over positives and
//! popularity-sampled negatives, Adam updates, early stopping on
//! validation mean percentile rank.

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, NegativeSampler, Split};
use crate::error::{Error, Result};
use crate::math::{relu_derivative, sigmoid, AdamConfig, AdamState, DenseMatrix};
use crate::rec::{mpr, RecommenderKind, RecommenderModel};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub embedding_dim: usize,
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Epochs without validation-MPR improvement before stopping.
    pub patience: usize,
    /// Hidden widths of the NCF scorer; ignored for MF.
    pub ncf_hidden: Vec<usize>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(embedding_dim: usize, learning_rate: T, seed: u64) -> Self {
        TrainConfig {
            embedding_dim,
            learning_rate,
            batch_size: 256,
            epochs: 10,
            negatives_per_positive: 4,
            seed,
            patience: 2,
            ncf_hidden: vec![64, 32, 16],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "embedding_dim, batch_size and negatives_per_positive must be ≥ 1".into(),
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= T::zero() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog<T> {
    pub epoch: usize,
    pub train_bce: T,
    pub val_mpr: Option<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: RecommenderModel<T>,
    pub log: Vec<EpochLog<T>>,
    /// Epoch of the returned snapshot when early stopping was active.
    pub best_epoch: Option<usize>,
}

/// Stable binary cross-entropy from the logit.
fn bce_from_logit<T: Scalar>(logit: T, label: T) -> T {
    logit.max(T::zero()) - logit * label + (T::one() + (-logit.abs()).exp()).ln()
}

struct GradBuffers<T> {
    user: DenseMatrix<T>,
    item: DenseMatrix<T>,
    scorer_w: Vec<DenseMatrix<T>>,
    scorer_b: Vec<Vec<T>>,
}

impl<T: Scalar> GradBuffers<T> {
    fn new(model: &RecommenderModel<T>) -> Self {
        GradBuffers {
            user: DenseMatrix::zeros(model.n_users(), model.d()),
            item: DenseMatrix::zeros(model.n_items(), model.d()),
            scorer_w: model
                .scorer
                .iter()
                .map(|l| DenseMatrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            scorer_b: model.scorer.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        self.user.data_mut().fill(T::zero());
        self.item.data_mut().fill(T::zero());
        for w in &mut self.scorer_w {
            w.data_mut().fill(T::zero());
        }
        for b in &mut self.scorer_b {
            b.fill(T::zero());
        }
    }
}

/// Accumulate one example's gradient contribution, scaled by `weight`.
/// Returns the example's BCE loss.
fn accumulate_example<T: Scalar>(
    model: &RecommenderModel<T>,
    grads: &mut GradBuffers<T>,
    user: usize,
    item: usize,
    label: T,
    weight: T,
) -> T {
    let e_u = model.user_embeddings.row(user).to_vec();
    let e_i = model.item_embeddings.row(item).to_vec();
    match model.kind() {
        RecommenderKind::Mf => {
            let logit = crate::math::dot(&e_u, &e_i);
            let loss = bce_from_logit(logit, label);
            let g = (sigmoid(logit) - label) * weight;
            for (k, gu) in grads.user.row_mut(user).iter_mut().enumerate() {
                *gu = *gu + g * e_i[k];
            }
            for (k, gi) in grads.item.row_mut(item).iter_mut().enumerate() {
                *gi = *gi + g * e_u[k];
            }
            loss
        }
        RecommenderKind::Ncf => {
            let (logit, pre, post) = model.ncf_forward_cached(&e_u, &e_i);
            let loss = bce_from_logit(logit, label);
            let g = (sigmoid(logit) - label) * weight;
            let mut delta = vec![g];
            for l in (0..model.scorer.len()).rev() {
                // input to layer l
                let input: Vec<T> = if l == 0 {
                    let mut x = e_u.clone();
                    x.extend_from_slice(&e_i);
                    x
                } else {
                    post[l - 1].clone()
                };
                for (r, &dr) in delta.iter().enumerate() {
                    grads.scorer_b[l][r] = grads.scorer_b[l][r] + dr;
                    if dr == T::zero() {
                        continue;
                    }
                    let row = grads.scorer_w[l].row_mut(r);
                    for (c, &x) in input.iter().enumerate() {
                        row[c] = row[c] + dr * x;
                    }
                }
                let back = model.scorer[l].weight.matvec_t(&delta);
                delta = if l == 0 {
                    back
                } else {
                    back.iter()
                        .zip(&pre[l - 1])
                        .map(|(&b, &a)| b * relu_derivative(a))
                        .collect()
                };
            }
            let (du, di) = delta.split_at(model.d());
            for (gu, &v) in grads.user.row_mut(user).iter_mut().zip(du) {
                *gu = *gu + v;
            }
            for (gi, &v) in grads.item.row_mut(item).iter_mut().zip(di) {
                *gi = *gi + v;
            }
            loss
        }
    }
}

/// Train a recommender of the given kind on the dataset's train split.
pub fn train_recommender<T: Scalar>(
    dataset: &InteractionDataset,
    config: &TrainConfig<T>,
    kind: RecommenderKind,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut rng = Rng::seed_from_u64(config.seed);
    let model_seed = rng.next_u64();
    let sampler_seed = rng.next_u64();
    let mut model = match kind {
        RecommenderKind::Mf => RecommenderModel::new_mf(
            dataset.n_users,
            dataset.n_items,
            config.embedding_dim,
            model_seed,
        ),
        RecommenderKind::Ncf => RecommenderModel::new_ncf(
            dataset.n_users,
            dataset.n_items,
            config.embedding_dim,
            &config.ncf_hidden,
            model_seed,
        ),
    };
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_epoch: None,
        });
    }

    let mut train_pairs: Vec<(usize, usize)> = dataset
        .split_positives(Split::Train)
        .map(|p| (p.user, p.item))
        .collect();
    if train_pairs.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    let mut sampler = NegativeSampler::from_dataset(dataset, sampler_seed)?;
    let has_val = dataset.split_len(Split::Val) > 0;

    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut opt_user = AdamState::new(model.user_embeddings.data().len(), adam_cfg);
    let mut opt_item = AdamState::new(model.item_embeddings.data().len(), adam_cfg);
    let mut opt_w: Vec<AdamState<T>> = model
        .scorer
        .iter()
        .map(|l| AdamState::new(l.weight.data().len(), adam_cfg))
        .collect();
    let mut opt_b: Vec<AdamState<T>> = model
        .scorer
        .iter()
        .map(|l| AdamState::new(l.bias.len(), adam_cfg))
        .collect();

    let mut grads = GradBuffers::new(&model);
    let mut log = Vec::new();
    let mut best: Option<(T, RecommenderModel<T>, usize)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        rng.shuffle(&mut train_pairs);
        let mut loss_sum = T::zero();
        let mut examples = 0usize;
        for (batch_idx, batch) in train_pairs.chunks(config.batch_size).enumerate() {
            grads.reset();
            let n_examples = batch.len() * (1 + config.negatives_per_positive);
            let weight = T::one() / lit::<T>(n_examples as f64);
            let mut batch_loss = T::zero();
            for &(u, i) in batch {
                batch_loss =
                    batch_loss + accumulate_example(&model, &mut grads, u, i, T::one(), weight);
                for neg in sampler.sample_negatives(u, config.negatives_per_positive)? {
                    batch_loss = batch_loss
                        + accumulate_example(&model, &mut grads, u, neg, T::zero(), weight);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum = loss_sum + batch_loss;
            examples += n_examples;
            opt_user.apply(
                "user_embeddings",
                model.user_embeddings.data_mut(),
                grads.user.data(),
            )?;
            opt_item.apply(
                "item_embeddings",
                model.item_embeddings.data_mut(),
                grads.item.data(),
            )?;
            for (l, layer) in model.scorer.iter_mut().enumerate() {
                opt_w[l].apply(
                    &format!("scorer.{l}.weight"),
                    layer.weight.data_mut(),
                    grads.scorer_w[l].data(),
                )?;
                opt_b[l].apply(
                    &format!("scorer.{l}.bias"),
                    &mut layer.bias,
                    &grads.scorer_b[l],
                )?;
            }
        }
        let train_bce = loss_sum / lit::<T>(examples as f64);
        let val_mpr = if has_val {
            Some(mpr(&model, dataset, Split::Val)?)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            train_bce,
            val_mpr,
        });
        if let Some(v) = val_mpr {
            let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
            if improved {
                best = Some((v, model.clone(), epoch));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= config.patience {
                    break;
                }
            }
        }
    }

    match best {
        Some((_, snapshot, epoch)) => Ok(TrainOutcome {
            model: snapshot,
            log,
            best_epoch: Some(epoch),
        }),
        None => Ok(TrainOutcome {
            model,
            log,
            best_epoch: None,
        }),
    }
}
