//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each test binary uses its own subset

use recsae_core::data::{DatasetConfig, InteractionDataset};
use recsae_core::rec::{train_recommender, RecommenderKind, RecommenderModel, TrainConfig};
use recsae_core::sae::{ActivationStat, LossConfig, SaeTrainConfig};
use recsae_core::synth::{planted_dataset, GroundTruth, SynthConfig};
use recsae_core::Real;

/// The planted-concept suite: 200 users, 120 items, 4 concepts, 10%
/// noise. Seeds are fixed so every run sees the same data.
pub fn planted_suite() -> (InteractionDataset, GroundTruth) {
    let synth = SynthConfig {
        n_users: 200,
        n_items: 120,
        n_concepts: 4,
        noise: 0.1,
        positives_per_user_min: 15,
        positives_per_user_max: 25,
        seed: 42,
    };
    planted_dataset(&synth, &DatasetConfig::default()).expect("planted suite builds")
}

/// MF recommender trained on the planted suite.
pub fn planted_mf(dataset: &InteractionDataset) -> RecommenderModel<Real> {
    let mut cfg = TrainConfig::new(8, 0.05, 1);
    cfg.epochs = 12;
    cfg.batch_size = 64;
    train_recommender(dataset, &cfg, RecommenderKind::Mf)
        .expect("MF trains")
        .model
}

/// Tuned defaults for concept recovery and interventions on the
/// planted suite.
pub fn tuned_sae_config(seed: u64) -> SaeTrainConfig<Real> {
    SaeTrainConfig {
        loss: LossConfig {
            alpha: 1.0,
            beta: 1.0,
            lambda1: 0.02,
            lambda2: 0.1,
            rho: 0.1,
            pred_pairs_per_batch: 32,
            batch_size: 32,
            activation_stat: ActivationStat::SoftClip,
        },
        m: 8,
        learning_rate: 0.01,
        epochs: 12,
        steps_per_epoch: 150,
        matryoshka: false,
        shared: true,
        seed,
    }
}

/// Ablation regime for the β sweep: sparsity pressure dominates the
/// (small) embedding term, so the prediction loss carries fidelity.
pub fn ablation_sae_config(seed: u64) -> SaeTrainConfig<Real> {
    SaeTrainConfig {
        loss: LossConfig {
            alpha: 0.05,
            beta: 1.0,
            lambda1: 0.05,
            lambda2: 0.2,
            rho: 0.05,
            pred_pairs_per_batch: 32,
            batch_size: 32,
            activation_stat: ActivationStat::SoftClip,
        },
        m: 6,
        learning_rate: 0.01,
        epochs: 12,
        steps_per_epoch: 150,
        matryoshka: false,
        shared: true,
        seed,
    }
}

/// Best purity@10 per concept: for each concept, the maximum over
/// neurons of the fraction of the neuron's top-10 items in the concept.
pub fn best_purity_per_concept(
    sae: &recsae_core::sae::SaeModel<Real>,
    model: &RecommenderModel<Real>,
    dataset: &InteractionDataset,
    truth: &GroundTruth,
) -> Vec<f64> {
    use recsae_core::analysis::{neuron_activations, semantic_purity, top_activating, Side};
    let activations = neuron_activations(sae, model, Side::Item).expect("activations");
    let mut best = vec![0.0; truth.concept_labels.len()];
    for neuron in 0..sae.m() {
        let top = top_activating(&activations, neuron, 10).expect("top items");
        for (c, label) in truth.concept_labels.iter().enumerate() {
            let p = semantic_purity(&top, label, &dataset.item_metadata).purity;
            if p > best[c] {
                best[c] = p;
            }
        }
    }
    best
}

/// The neuron whose top-10 items are purest for `label`.
pub fn best_neuron_for_label(
    sae: &recsae_core::sae::SaeModel<Real>,
    model: &RecommenderModel<Real>,
    dataset: &InteractionDataset,
    label: &str,
) -> usize {
    use recsae_core::analysis::{neuron_activations, semantic_purity, top_activating, Side};
    let activations = neuron_activations(sae, model, Side::Item).expect("activations");
    (0..sae.m())
        .max_by(|&a, &b| {
            let pa = semantic_purity(
                &top_activating(&activations, a, 10).unwrap(),
                label,
                &dataset.item_metadata,
            )
            .purity;
            let pb = semantic_purity(
                &top_activating(&activations, b, 10).unwrap(),
                label,
                &dataset.item_metadata,
            )
            .purity;
            pa.partial_cmp(&pb).unwrap()
        })
        .expect("m >= 1")
}
