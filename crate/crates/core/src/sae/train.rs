//! SAE training against a frozen recommender. Only encoder/decoder
//! parameters receive updates; the recommender supplies embeddings,
//! scores, and score gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{AdamConfig, AdamState};
use crate::rec::RecommenderModel;
use crate::rng::Rng;
use crate::sae::{
    total_loss_with_grads, BatchSample, LossConfig, SaeGrads, SaeModel, SaePair,
};
use crate::scalar::{lit, Scalar};
use crate::data::InteractionDataset;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaeTrainConfig<T> {
    pub loss: LossConfig<T>,
    /// Bottleneck size.
    pub m: usize,
    pub learning_rate: T,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Four-level nested dictionary `{⌈m/4⌉, ⌈m/2⌉, ⌈3m/4⌉, m}`.
    pub matryoshka: bool,
    /// One SAE serving both towers (default) or one per tower.
    pub shared: bool,
    pub seed: u64,
}

impl<T: Scalar> SaeTrainConfig<T> {
    pub fn new(m: usize, seed: u64) -> Self {
        SaeTrainConfig {
            loss: LossConfig::default(),
            m,
            learning_rate: lit(0.01),
            epochs: 15,
            steps_per_epoch: 200,
            matryoshka: false,
            shared: true,
            seed,
        }
    }
}

/// The four-level nested sizes used when matryoshka mode is on.
pub fn four_level_sizes(m: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = [1, 2, 3, 4]
        .iter()
        .map(|&q| (q * m).div_ceil(4))
        .collect();
    sizes.dedup();
    sizes
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaeNeuronStats<T> {
    /// Mean per-neuron activation rate over the epoch.
    pub activation_rates: Vec<T>,
    /// Fraction of neurons with rate below 1e-6.
    pub dead_fraction: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaeEpochStats<T> {
    pub epoch: usize,
    pub mean_emb: T,
    pub mean_pred: T,
    pub mean_l1: T,
    pub mean_kl: T,
    pub mean_total: T,
    /// One entry per distinct SAE (one when shared, two otherwise).
    pub neuron_stats: Vec<SaeNeuronStats<T>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaeTrainReport<T> {
    pub epochs: Vec<SaeEpochStats<T>>,
}

const DEAD_RATE: f64 = 1e-6;

struct SaeOptimizer<T> {
    w: AdamState<T>,
    b_enc: AdamState<T>,
    b_dec: AdamState<T>,
}

impl<T: Scalar> SaeOptimizer<T> {
    fn new(sae: &SaeModel<T>, cfg: AdamConfig<T>) -> Self {
        SaeOptimizer {
            w: AdamState::new(sae.m() * sae.d(), cfg),
            b_enc: AdamState::new(sae.m(), cfg),
            b_dec: AdamState::new(sae.d(), cfg),
        }
    }

    fn apply(&mut self, label: &str, sae: &mut SaeModel<T>, grads: &SaeGrads<T>) -> Result<()> {
        let (w, b_enc, b_dec) = sae.params_mut();
        self.w.apply(&format!("{label}.w"), w.data_mut(), grads.w.data())?;
        self.b_enc
            .apply(&format!("{label}.b_enc"), b_enc, &grads.b_enc)?;
        self.b_dec
            .apply(&format!("{label}.b_dec"), b_dec, &grads.b_dec)?;
        Ok(())
    }
}

/// Train the SAE(s) over the frozen recommender's embedding tables.
///
/// Each step samples `batch_size` rows per tower for reconstruction, plus
/// `pred_pairs_per_batch` (training user, random item) pairs whose
/// prediction-level gradient flows through the frozen scorer into the
/// encoder and decoder.
pub fn train_sae<T: Scalar>(
    model: &RecommenderModel<T>,
    dataset: &InteractionDataset,
    config: &SaeTrainConfig<T>,
) -> Result<(SaePair<T>, SaeTrainReport<T>)> {
    config.loss.validate()?;
    if model.n_users() != dataset.n_users || model.n_items() != dataset.n_items {
        return Err(Error::dim(
            "train_sae model vs dataset",
            dataset.n_users,
            model.n_users(),
        ));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= T::zero() {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    if config.m == 0 {
        return Err(Error::Config("bottleneck size m must be ≥ 1".into()));
    }
    let training_users = dataset.training_users();
    if training_users.is_empty() {
        return Err(Error::Data("no users with training positives".into()));
    }

    let nested = config.matryoshka.then(|| four_level_sizes(config.m));
    let d = model.d();
    let mut rng = Rng::seed_from_u64(config.seed);

    let mut saes = if config.shared {
        // decoder bias centers on the pooled mean of both tables
        let nu = model.n_users() as f64;
        let ni = model.n_items() as f64;
        let mu = model.user_embeddings().mean_row();
        let mi = model.item_embeddings().mean_row();
        let center: Vec<T> = mu
            .iter()
            .zip(&mi)
            .map(|(&a, &b)| {
                (a * lit::<T>(nu) + b * lit::<T>(ni)) / lit::<T>(nu + ni)
            })
            .collect();
        SaePair::Shared(SaeModel::init(config.m, d, nested, center, &mut rng)?)
    } else {
        let user = SaeModel::init(
            config.m,
            d,
            nested.clone(),
            model.user_embeddings().mean_row(),
            &mut rng,
        )?;
        let item = SaeModel::init(
            config.m,
            d,
            nested,
            model.item_embeddings().mean_row(),
            &mut rng,
        )?;
        SaePair::PerTower { user, item }
    };

    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut optimizers: Vec<SaeOptimizer<T>> = saes
        .models()
        .iter()
        .map(|s| SaeOptimizer::new(s, adam_cfg))
        .collect();

    let b = config.loss.batch_size;
    let n_pairs = config.loss.pred_pairs_per_batch;
    let mut report = SaeTrainReport { epochs: Vec::new() };

    for epoch in 0..config.epochs {
        let mut sums = [T::zero(); 5]; // emb, pred, l1, kl, total
        let mut rate_sums: Vec<Vec<T>> = saes
            .models()
            .iter()
            .map(|s| vec![T::zero(); s.m()])
            .collect();
        for step in 0..config.steps_per_epoch {
            let user_rows: Vec<usize> =
                (0..b).map(|_| rng.below(model.n_users())).collect();
            let item_rows: Vec<usize> =
                (0..b).map(|_| rng.below(model.n_items())).collect();
            let pairs: Vec<(usize, usize)> = (0..n_pairs)
                .map(|_| {
                    (
                        training_users[rng.below(training_users.len())],
                        rng.below(model.n_items()),
                    )
                })
                .collect();
            let batch = BatchSample {
                user_rows: &user_rows,
                item_rows: &item_rows,
                pairs: &pairs,
            };
            let (breakdown, grads, rates) =
                total_loss_with_grads(model, &saes, &batch, &config.loss)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite SAE loss at epoch {epoch}, step {step}"
                )));
            }
            for (k, v) in [
                breakdown.emb,
                breakdown.pred,
                breakdown.l1,
                breakdown.kl,
                breakdown.total,
            ]
            .into_iter()
            .enumerate()
            {
                sums[k] = sums[k] + v;
            }
            for (acc, r) in rate_sums.iter_mut().zip(&rates) {
                for (a, &v) in acc.iter_mut().zip(r) {
                    *a = *a + v;
                }
            }
            for (k, sae) in saes.models_mut().into_iter().enumerate() {
                optimizers[k].apply(&format!("sae{k}"), sae, &grads[k])?;
            }
        }
        let steps = lit::<T>(config.steps_per_epoch as f64);
        let dead_cut = lit::<T>(DEAD_RATE);
        let neuron_stats = rate_sums
            .into_iter()
            .map(|sums| {
                let rates: Vec<T> = sums.into_iter().map(|s| s / steps).collect();
                let dead = rates.iter().filter(|&&r| r < dead_cut).count();
                let dead_fraction = lit::<T>(dead as f64 / rates.len() as f64);
                SaeNeuronStats {
                    activation_rates: rates,
                    dead_fraction,
                }
            })
            .collect();
        report.epochs.push(SaeEpochStats {
            epoch,
            mean_emb: sums[0] / steps,
            mean_pred: sums[1] / steps,
            mean_l1: sums[2] / steps,
            mean_kl: sums[3] / steps,
            mean_total: sums[4] / steps,
            neuron_stats,
        });
    }

    Ok((saes, report))
}
