//! SAE loss terms and their analytic gradients.
//!
//! The total objective is
//! `α·L_emb + β·L_pred + λ1·ℓ1 + λ2·KL`
//! where `L_emb` is the batch-mean squared reconstruction error summed
//! over the user and item towers, `L_pred` is the mean squared gap
//! between original and reconstructed affinities through the frozen
//! scorer, and the sparsity terms act on bottleneck activations. With
//! nested dictionaries, `L_emb` and `L_pred` average over all levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, DenseMatrix};
use crate::rec::RecommenderModel;
use crate::sae::{Forward, SaeModel, SaePair};
use crate::scalar::{lit, Scalar};

/// How a bottleneck activation contributes to a neuron's empirical
/// activation rate `p_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationStat {
    /// `min(z, 1)`: differentiable and bounded, the default.
    SoftClip,
    /// `1[z > 0]`: the literal active-rate; not differentiable, so it
    /// contributes no gradient and is intended for reporting and
    /// experiments.
    Indicator,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig<T> {
    pub alpha: T,
    pub beta: T,
    pub lambda1: T,
    pub lambda2: T,
    /// Target activation rate, strictly inside (0, 1).
    pub rho: T,
    /// |S|: user–item pairs sampled per step for the prediction loss.
    pub pred_pairs_per_batch: usize,
    /// Embeddings sampled per tower per step.
    pub batch_size: usize,
    pub activation_stat: ActivationStat,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        LossConfig {
            alpha: T::one(),
            beta: T::one(),
            lambda1: lit(0.01),
            lambda2: lit(0.1),
            rho: lit(0.05),
            pred_pairs_per_batch: 32,
            batch_size: 32,
            activation_stat: ActivationStat::SoftClip,
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.lambda1, self.lambda2];
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.rho > T::zero() && self.rho < T::one()) {
            return Err(Error::Config(format!(
                "rho {} must lie strictly inside (0, 1)",
                self.rho
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Squared Euclidean distance between an embedding and its reconstruction.
pub fn loss_emb<T: Scalar>(e: &[T], reconstruction: &[T]) -> T {
    assert_eq!(e.len(), reconstruction.len(), "loss_emb shapes");
    e.iter()
        .zip(reconstruction)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

/// Mean squared gap between original and reconstructed affinities over
/// the sampled pairs, scored through the frozen model (full dictionary).
pub fn loss_pred<T: Scalar>(
    model: &RecommenderModel<T>,
    pairs: &[(usize, usize)],
    sae_user: &SaeModel<T>,
    sae_item: &SaeModel<T>,
) -> Result<T> {
    if pairs.is_empty() {
        return Err(Error::Data("loss_pred over an empty pair sample".into()));
    }
    let mut sum = T::zero();
    for &(u, i) in pairs {
        let e_u = model.user_embedding(u);
        let e_i = model.item_embedding(i);
        let original = model.score(e_u, e_i)?;
        let rec_u = sae_user.reconstruct(e_u, None)?;
        let rec_i = sae_item.reconstruct(e_i, None)?;
        let reconstructed = model.score(&rec_u, &rec_i)?;
        let diff = original - reconstructed;
        sum = sum + diff * diff;
    }
    Ok(sum / lit::<T>(pairs.len() as f64))
}

const RATE_CLAMP: f64 = 1e-6;

fn kl_bernoulli<T: Scalar>(rho: T, p: T) -> T {
    rho * (rho / p).ln() + (T::one() - rho) * ((T::one() - rho) / (T::one() - p)).ln()
}

#[derive(Clone, Debug)]
pub struct SparsityStats<T> {
    pub l1: T,
    pub kl: T,
    /// Per-neuron empirical activation rates before clamping.
    pub rates: Vec<T>,
}

/// ℓ1 and KL sparsity penalties over a batch of activations (rows are
/// samples). Rates are clamped to `[1e-6, 1−1e-6]` so the KL term stays
/// finite for dead or saturated neurons.
pub fn sparsity_stats<T: Scalar>(
    z_batch: &DenseMatrix<T>,
    config: &LossConfig<T>,
) -> SparsityStats<T> {
    let b = z_batch.rows();
    assert!(b >= 1, "sparsity over an empty batch");
    let m = z_batch.cols();
    let bn = lit::<T>(b as f64);
    let mut l1 = T::zero();
    let mut rates = vec![T::zero(); m];
    for s in 0..b {
        for (j, &z) in z_batch.row(s).iter().enumerate() {
            l1 = l1 + z.abs();
            let a = match config.activation_stat {
                ActivationStat::SoftClip => z.min(T::one()),
                ActivationStat::Indicator => {
                    if z > T::zero() {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
            };
            rates[j] = rates[j] + a;
        }
    }
    l1 = l1 / bn;
    for r in &mut rates {
        *r = *r / bn;
    }
    let lo = lit::<T>(RATE_CLAMP);
    let hi = T::one() - lo;
    let kl = rates
        .iter()
        .map(|&p| kl_bernoulli(config.rho, p.max(lo).min(hi)))
        .sum();
    SparsityStats { l1, kl, rates }
}

/// `(ℓ1, KL)` over a batch of activations.
pub fn loss_sparsity<T: Scalar>(z_batch: &DenseMatrix<T>, config: &LossConfig<T>) -> (T, T) {
    let stats = sparsity_stats(z_batch, config);
    (stats.l1, stats.kl)
}

/// Indices feeding one optimization step: embedding rows per tower plus
/// the user–item pairs for the prediction loss.
#[derive(Clone, Debug)]
pub struct BatchSample<'a> {
    pub user_rows: &'a [usize],
    pub item_rows: &'a [usize],
    pub pairs: &'a [(usize, usize)],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    /// Batch-mean squared reconstruction error, level-averaged, summed
    /// over towers (unweighted).
    pub emb: T,
    /// Mean squared affinity gap, level-averaged (unweighted).
    pub pred: T,
    /// ℓ1 penalty summed over distinct SAEs (unweighted).
    pub l1: T,
    /// KL penalty summed over distinct SAEs (unweighted).
    pub kl: T,
    /// `α·emb + β·pred + λ1·l1 + λ2·kl`.
    pub total: T,
}

/// Gradients for one SAE's parameters.
#[derive(Clone, Debug)]
pub struct SaeGrads<T> {
    pub w: DenseMatrix<T>,
    pub b_enc: Vec<T>,
    pub b_dec: Vec<T>,
}

impl<T: Scalar> SaeGrads<T> {
    pub fn zeros_like(sae: &SaeModel<T>) -> Self {
        SaeGrads {
            w: DenseMatrix::zeros(sae.m(), sae.d()),
            b_enc: vec![T::zero(); sae.m()],
            b_dec: vec![T::zero(); sae.d()],
        }
    }

    /// Flattened as `[w, b_enc, b_dec]`, matching `SaeModel::flat_params`.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.w.data().len() + self.b_enc.len() + self.b_dec.len());
        out.extend_from_slice(self.w.data());
        out.extend_from_slice(&self.b_enc);
        out.extend_from_slice(&self.b_dec);
        out
    }
}

/// Backprop an upstream reconstruction gradient `r = ∂L/∂ẽ` through the
/// decode-then-encode path at one sample, accumulating into `grads`.
///
/// The tied weight picks up two contributions: its decoder use
/// (`∂ẽ/∂W_{j,·} = z_j`) and its encoder use through the ReLU.
fn backprop_reconstruction<T: Scalar>(
    sae: &SaeModel<T>,
    e: &[T],
    fwd: &Forward<T>,
    prefix: usize,
    r: &[T],
    grads: &mut SaeGrads<T>,
) {
    for (g, &ri) in grads.b_dec.iter_mut().zip(r) {
        *g = *g + ri;
    }
    for j in 0..prefix {
        let zj = fwd.z[j];
        if zj <= T::zero() {
            continue; // inactive: no decoder use, ReLU gate closed
        }
        let dz = dot(sae.w.row(j), r);
        let grow = grads.w.row_mut(j);
        for k in 0..r.len() {
            grow[k] = grow[k] + zj * r[k] + dz * e[k];
        }
        grads.b_enc[j] = grads.b_enc[j] + dz;
    }
}

/// Backprop a gradient on the activations (`dz[j] = ∂L/∂z_j`) through
/// the encoder only (sparsity path).
fn backprop_encoder<T: Scalar>(
    e: &[T],
    fwd: &Forward<T>,
    dz: &[T],
    grads: &mut SaeGrads<T>,
) {
    for (j, &g) in dz.iter().enumerate() {
        if g == T::zero() || fwd.pre[j] <= T::zero() {
            continue;
        }
        grads.b_enc[j] = grads.b_enc[j] + g;
        let grow = grads.w.row_mut(j);
        for (k, &ek) in e.iter().enumerate() {
            grow[k] = grow[k] + g * ek;
        }
    }
}

struct TowerPass<T> {
    /// (embedding row, cached forward), per batch sample.
    samples: Vec<(Vec<T>, Forward<T>)>,
}

fn run_tower<T: Scalar>(
    sae: &SaeModel<T>,
    embeddings: &DenseMatrix<T>,
    rows: &[usize],
    context: &str,
) -> Result<TowerPass<T>> {
    if sae.d() != embeddings.cols() {
        return Err(Error::dim(context, embeddings.cols(), sae.d()));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for &r in rows {
        if r >= embeddings.rows() {
            return Err(Error::Data(format!("{context}: row {r} out of range")));
        }
        let e = embeddings.row(r).to_vec();
        let fwd = sae.forward(&e);
        samples.push((e, fwd));
    }
    Ok(TowerPass { samples })
}

fn evaluate<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
    batch: &BatchSample<'_>,
    config: &LossConfig<T>,
    mut grads: Option<&mut Vec<SaeGrads<T>>>,
) -> Result<(LossBreakdown<T>, Vec<Vec<T>>)> {
    config.validate()?;
    let sae_u = saes.user();
    let sae_i = saes.item();
    if sae_u.n_levels() != sae_i.n_levels() {
        return Err(Error::Config(
            "user and item SAEs must share the level structure".into(),
        ));
    }

    let user_pass = run_tower(sae_u, model.user_embeddings(), batch.user_rows, "user tower")?;
    let item_pass = run_tower(sae_i, model.item_embeddings(), batch.item_rows, "item tower")?;

    // --- embedding-level reconstruction, per tower ---
    let mut emb = T::zero();
    let towers: [(usize, &SaeModel<T>, &TowerPass<T>); 2] =
        [(0, sae_u, &user_pass), (1, sae_i, &item_pass)];
    for &(tower_idx, sae, pass) in &towers {
        let levels = sae.levels();
        let b = pass.samples.len();
        if b == 0 {
            continue;
        }
        let norm = lit::<T>((b * levels.len()) as f64);
        for (e, fwd) in &pass.samples {
            for &prefix in &levels {
                let rec = sae.decode_prefix(&fwd.z, prefix);
                emb = emb + loss_emb(e, &rec) / norm;
                if let Some(gs) = grads.as_deref_mut() {
                    let scale = lit::<T>(2.0) * config.alpha / norm;
                    let r: Vec<T> =
                        rec.iter().zip(e).map(|(&rk, &ek)| (rk - ek) * scale).collect();
                    let g = grads_for(gs, saes, tower_idx);
                    backprop_reconstruction(sae, e, fwd, prefix, &r, g);
                }
            }
        }
    }

    // --- prediction-level loss through the frozen scorer ---
    let mut pred = T::zero();
    if !batch.pairs.is_empty() {
        let levels = sae_u.levels();
        let levels_i = sae_i.levels();
        let norm = lit::<T>((batch.pairs.len() * levels.len()) as f64);
        for &(u, i) in batch.pairs {
            if u >= model.n_users() || i >= model.n_items() {
                return Err(Error::Data(format!("pair ({u}, {i}) out of range")));
            }
            let e_u = model.user_embedding(u).to_vec();
            let e_i = model.item_embedding(i).to_vec();
            let original = model.score(&e_u, &e_i)?;
            let fwd_u = sae_u.forward(&e_u);
            let fwd_i = sae_i.forward(&e_i);
            for (li, &prefix) in levels.iter().enumerate() {
                let prefix_i = levels_i[li];
                let rec_u = sae_u.decode_prefix(&fwd_u.z, prefix);
                let rec_i = sae_i.decode_prefix(&fwd_i.z, prefix_i);
                let (reconstructed, score_grads) =
                    model.score_with_gradients(&rec_u, &rec_i)?;
                let diff = reconstructed - original;
                pred = pred + diff * diff / norm;
                if let Some(gs) = grads.as_deref_mut() {
                    let c = lit::<T>(2.0) * config.beta * diff / norm;
                    let r_u: Vec<T> = score_grads.d_user.iter().map(|&g| c * g).collect();
                    let r_i: Vec<T> = score_grads.d_item.iter().map(|&g| c * g).collect();
                    backprop_reconstruction(
                        sae_u,
                        &e_u,
                        &fwd_u,
                        prefix,
                        &r_u,
                        grads_for(gs, saes, 0),
                    );
                    backprop_reconstruction(
                        sae_i,
                        &e_i,
                        &fwd_i,
                        prefix_i,
                        &r_i,
                        grads_for(gs, saes, 1),
                    );
                }
            }
        }
    }

    // --- sparsity per distinct SAE over its reconstruction batches ---
    let mut l1 = T::zero();
    let mut kl = T::zero();
    let mut rates_out = Vec::new();
    let tower_samples: Vec<Vec<&(Vec<T>, Forward<T>)>> = if saes.is_shared() {
        vec![user_pass
            .samples
            .iter()
            .chain(item_pass.samples.iter())
            .collect()]
    } else {
        vec![
            user_pass.samples.iter().collect(),
            item_pass.samples.iter().collect(),
        ]
    };
    for (sae_idx, samples) in tower_samples.iter().enumerate() {
        let sae = saes.models()[sae_idx];
        if samples.is_empty() {
            rates_out.push(vec![T::zero(); sae.m()]);
            continue;
        }
        let z_rows: Vec<Vec<T>> = samples.iter().map(|(_, f)| f.z.clone()).collect();
        let z_batch = DenseMatrix::from_rows(&z_rows)?;
        let stats = sparsity_stats(&z_batch, config);
        l1 = l1 + stats.l1;
        kl = kl + stats.kl;
        if let Some(gs) = grads.as_deref_mut() {
            let b_rows = lit::<T>(samples.len() as f64);
            let lo = lit::<T>(RATE_CLAMP);
            let hi = T::one() - lo;
            // dKL/dp per neuron; zero where the clamp is active
            let dkl_dp: Vec<T> = stats
                .rates
                .iter()
                .map(|&p| {
                    if p <= lo || p >= hi {
                        T::zero()
                    } else {
                        -config.rho / p + (T::one() - config.rho) / (T::one() - p)
                    }
                })
                .collect();
            let mut dz = vec![T::zero(); sae.m()];
            for (e, fwd) in samples.iter() {
                for j in 0..sae.m() {
                    let z = fwd.z[j];
                    if z <= T::zero() {
                        dz[j] = T::zero();
                        continue;
                    }
                    let mut g = config.lambda1 / b_rows;
                    if config.activation_stat == ActivationStat::SoftClip
                        && z < T::one()
                        && config.lambda2 > T::zero()
                    {
                        g = g + config.lambda2 * dkl_dp[j] / b_rows;
                    }
                    dz[j] = g;
                }
                backprop_encoder(e, fwd, &dz, &mut gs[sae_idx]);
            }
        }
        rates_out.push(stats.rates);
    }

    let total = config.alpha * emb + config.beta * pred + config.lambda1 * l1 + config.lambda2 * kl;
    Ok((
        LossBreakdown {
            emb,
            pred,
            l1,
            kl,
            total,
        },
        rates_out,
    ))
}

/// Map a tower (0 = user, 1 = item) to its gradient accumulator.
fn grads_for<'g, T: Scalar>(
    grads: &'g mut [SaeGrads<T>],
    saes: &SaePair<T>,
    tower: usize,
) -> &'g mut SaeGrads<T> {
    if saes.is_shared() {
        &mut grads[0]
    } else {
        &mut grads[tower]
    }
}

/// Full objective for one batch.
pub fn total_loss<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
    batch: &BatchSample<'_>,
    config: &LossConfig<T>,
) -> Result<LossBreakdown<T>> {
    evaluate(model, saes, batch, config, None).map(|(b, _)| b)
}

/// Full objective plus analytic gradients for every SAE parameter,
/// including the prediction path through the frozen recommender. Also
/// returns per-SAE neuron activation rates for reporting.
#[allow(clippy::type_complexity)]
pub fn total_loss_with_grads<T: Scalar>(
    model: &RecommenderModel<T>,
    saes: &SaePair<T>,
    batch: &BatchSample<'_>,
    config: &LossConfig<T>,
) -> Result<(LossBreakdown<T>, Vec<SaeGrads<T>>, Vec<Vec<T>>)> {
    let mut grads: Vec<SaeGrads<T>> = saes.models().iter().map(|s| SaeGrads::zeros_like(s)).collect();
    let (breakdown, rates) = evaluate(model, saes, batch, config, Some(&mut grads))?;
    Ok((breakdown, grads, rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::finite_diff_check;
    use crate::rec::RecommenderKind;
    use crate::rng::Rng;

    fn mf_model(user_rows: &[Vec<f64>], item_rows: &[Vec<f64>]) -> RecommenderModel<f64> {
        RecommenderModel::from_parts(
            RecommenderKind::Mf,
            DenseMatrix::from_rows(user_rows).unwrap(),
            DenseMatrix::from_rows(item_rows).unwrap(),
            Vec::new(),
        )
        .unwrap()
    }

    /// SAE reconstructing its input exactly: W = [I; −I] (tied decode
    /// recovers e as z⁺ − z⁻), zero biases.
    fn identity_sae(d: usize) -> SaeModel<f64> {
        let mut rows = Vec::new();
        for k in 0..d {
            let mut r = vec![0.0; d];
            r[k] = 1.0;
            rows.push(r);
        }
        for k in 0..d {
            let mut r = vec![0.0; d];
            r[k] = -1.0;
            rows.push(r);
        }
        SaeModel::from_parts(
            DenseMatrix::from_rows(&rows).unwrap(),
            vec![0.0; 2 * d],
            vec![0.0; d],
            None,
        )
        .unwrap()
    }

    fn zero_sae(m: usize, d: usize) -> SaeModel<f64> {
        SaeModel::from_parts(DenseMatrix::zeros(m, d), vec![0.0; m], vec![0.0; d], None).unwrap()
    }

    #[test]
    fn identity_sae_reconstructs() {
        let sae = identity_sae(3);
        let e = vec![0.3, -1.2, 0.0];
        let rec = sae.reconstruct(&e, None).unwrap();
        for (a, b) in e.iter().zip(&rec) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_emb_basics_and_oracle() {
        assert_eq!(loss_emb(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(loss_emb(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
        let mut rng = Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let naive: f64 = (0..5).map(|k| (a[k] - b[k]).powi(2)).sum();
            assert!((loss_emb(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_pred_zero_under_exact_reconstruction() {
        let model = mf_model(
            &[vec![0.4, -0.3], vec![1.0, 0.2]],
            &[vec![0.8, 0.1], vec![-0.5, 0.9]],
        );
        let sae = identity_sae(2);
        let v = loss_pred(&model, &[(0, 0), (0, 1), (1, 0), (1, 1)], &sae, &sae).unwrap();
        assert!(v.abs() < 1e-25, "{v}");
    }

    #[test]
    fn loss_pred_single_pair_hand_value() {
        // ŷ = σ(1), ỹ = σ(0): (σ(1) − σ(0))² ≈ 0.053388
        let model = mf_model(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]]);
        let sae_u = zero_sae(3, 2); // reconstructs to the zero vector
        let sae_i = identity_sae(2);
        let v = loss_pred(&model, &[(0, 0)], &sae_u, &sae_i).unwrap();
        let expected = (crate::math::sigmoid(1.0f64) - 0.5).powi(2);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.053388).abs() < 1e-5);
    }

    #[test]
    fn loss_pred_duplicate_pairs_mean_invariant() {
        let model = mf_model(
            &[vec![0.4, -0.3], vec![1.0, 0.2]],
            &[vec![0.8, 0.1], vec![-0.5, 0.9]],
        );
        let mut rng = Rng::seed_from_u64(4);
        let sae = SaeModel::<f64>::init(3, 2, None, vec![0.0; 2], &mut rng).unwrap();
        let pairs = vec![(0, 1), (1, 0)];
        let doubled = [pairs.clone(), pairs.clone()].concat();
        let a = loss_pred(&model, &pairs, &sae, &sae).unwrap();
        let b = loss_pred(&model, &doubled, &sae, &sae).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn loss_pred_empty_pairs_errors() {
        let model = mf_model(&[vec![1.0]], &[vec![1.0]]);
        let sae = identity_sae(1);
        assert!(loss_pred(&model, &[], &sae, &sae).is_err());
    }

    #[test]
    fn kl_zero_when_rates_hit_target() {
        // one neuron, B = 20, a single full activation: p = 1/20 = ρ
        let mut cfg = LossConfig::<f64>::default();
        cfg.rho = 0.05;
        let mut rows = vec![vec![0.0]; 20];
        rows[0][0] = 1.0;
        let z = DenseMatrix::from_rows(&rows).unwrap();
        let (_, kl) = loss_sparsity(&z, &cfg);
        assert!(kl.abs() < 1e-12, "{kl}");
    }

    #[test]
    fn kl_closed_form_single_neuron() {
        // ρ = 0.05, p = 0.5:
        //   0.05·ln(0.1) + 0.95·ln(1.9) = 0.4946319372...
        let mut cfg = LossConfig::<f64>::default();
        cfg.rho = 0.05;
        let z = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let (l1, kl) = loss_sparsity(&z, &cfg);
        let expected = 0.05 * (0.05f64 / 0.5).ln() + 0.95 * (0.95f64 / 0.5).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.4946319372).abs() < 1e-9);
        assert!((l1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_zero_activations_clamp() {
        let cfg = LossConfig::<f64>::default();
        let z = DenseMatrix::<f64>::zeros(8, 3);
        let (l1, kl) = loss_sparsity(&z, &cfg);
        assert_eq!(l1, 0.0);
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn kl_non_negative_over_random_rates() {
        let mut rng = Rng::seed_from_u64(6);
        let mut cfg = LossConfig::<f64>::default();
        for _ in 0..200 {
            cfg.rho = rng.uniform(0.01, 0.99);
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.uniform(0.0, 2.0)).collect())
                .collect();
            let z = DenseMatrix::from_rows(&rows).unwrap();
            let (_, kl) = loss_sparsity(&z, &cfg);
            assert!(kl >= -1e-12, "kl {kl} at rho {}", cfg.rho);
        }
    }

    fn toy_setup(
        kind: RecommenderKind,
        d: usize,
        m: usize,
        nested: bool,
        seed: u64,
    ) -> (RecommenderModel<f64>, SaePair<f64>) {
        let model = match kind {
            RecommenderKind::Mf => RecommenderModel::new_mf(6, 7, d, seed),
            RecommenderKind::Ncf => RecommenderModel::new_ncf(6, 7, d, &[8, 6], seed),
        };
        let mut rng = Rng::seed_from_u64(seed ^ 0xABCD);
        let nested_sizes = nested.then(|| crate::sae::four_level_sizes(m));
        let sae = SaeModel::init(m, d, nested_sizes, vec![0.0; d], &mut rng).unwrap();
        (model, SaePair::Shared(sae))
    }

    #[test]
    fn total_loss_zero_weights_is_zero() {
        let (model, saes) = toy_setup(RecommenderKind::Mf, 3, 4, false, 5);
        let mut cfg = LossConfig::<f64>::default();
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        let batch = BatchSample {
            user_rows: &[0, 1],
            item_rows: &[2, 3],
            pairs: &[(0, 0)],
        };
        let b = total_loss(&model, &saes, &batch, &cfg).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn total_equals_weighted_component_sum() {
        let (model, saes) = toy_setup(RecommenderKind::Mf, 3, 5, false, 8);
        let mut cfg = LossConfig::<f64>::default();
        cfg.alpha = 0.7;
        cfg.beta = 1.3;
        cfg.lambda1 = 0.02;
        cfg.lambda2 = 0.4;
        cfg.rho = 0.1;
        let batch = BatchSample {
            user_rows: &[0, 1, 4],
            item_rows: &[2, 3, 6],
            pairs: &[(0, 2), (1, 5)],
        };
        let b = total_loss(&model, &saes, &batch, &cfg).unwrap();
        let want = 0.7 * b.emb + 1.3 * b.pred + 0.02 * b.l1 + 0.4 * b.kl;
        assert!((b.total - want).abs() < 1e-12);

        // component oracle: recompute each term with the standalone ops
        let sae = saes.user();
        let mut emb = 0.0;
        for &u in batch.user_rows {
            let e = model.user_embedding(u);
            emb += loss_emb(e, &sae.reconstruct(e, None).unwrap()) / 3.0;
        }
        for &i in batch.item_rows {
            let e = model.item_embedding(i);
            emb += loss_emb(e, &sae.reconstruct(e, None).unwrap()) / 3.0;
        }
        assert!((b.emb - emb).abs() < 1e-12);
        let pred = loss_pred(&model, batch.pairs, sae, sae).unwrap();
        assert!((b.pred - pred).abs() < 1e-12);
        let mut z_rows = Vec::new();
        for &u in batch.user_rows {
            z_rows.push(sae.encode(model.user_embedding(u)).unwrap());
        }
        for &i in batch.item_rows {
            z_rows.push(sae.encode(model.item_embedding(i)).unwrap());
        }
        let (l1, kl) = loss_sparsity(&DenseMatrix::from_rows(&z_rows).unwrap(), &cfg);
        assert!((b.l1 - l1).abs() < 1e-12);
        assert!((b.kl - kl).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_drops_prediction_term_from_total() {
        let (model, saes) = toy_setup(RecommenderKind::Mf, 3, 5, false, 9);
        let mut cfg = LossConfig::<f64>::default();
        cfg.beta = 0.0;
        let batch = BatchSample {
            user_rows: &[0, 1],
            item_rows: &[2, 3],
            pairs: &[(0, 2), (1, 5)],
        };
        let b = total_loss(&model, &saes, &batch, &cfg).unwrap();
        let want = cfg.alpha * b.emb + cfg.lambda1 * b.l1 + cfg.lambda2 * b.kl;
        assert!((b.total - want).abs() < 1e-12);
        assert!(b.pred > 0.0); // still measured, just unweighted
    }

    /// Every SAE parameter's analytic gradient versus central
    /// differences, through both MF and NCF frozen scorers.
    #[test]
    fn gradients_match_finite_differences() {
        for (kind, nested, seed) in [
            (RecommenderKind::Mf, false, 41),
            (RecommenderKind::Mf, true, 42),
            (RecommenderKind::Ncf, false, 43),
            (RecommenderKind::Ncf, true, 44),
        ] {
            let (model, saes) = toy_setup(kind, 4, 6, nested, seed);
            let mut cfg = LossConfig::<f64>::default();
            cfg.alpha = 0.9;
            cfg.beta = 1.1;
            cfg.lambda1 = 0.03;
            cfg.lambda2 = 0.2;
            cfg.rho = 0.07;
            cfg.batch_size = 8;
            let user_rows: Vec<usize> = (0..8).map(|k| k % 6).collect();
            let item_rows: Vec<usize> = (0..8).map(|k| k % 7).collect();
            let pairs: Vec<(usize, usize)> = (0..8).map(|k| (k % 6, (3 * k) % 7)).collect();
            let batch = BatchSample {
                user_rows: &user_rows,
                item_rows: &item_rows,
                pairs: &pairs,
            };
            let (_, grads, _) = total_loss_with_grads(&model, &saes, &batch, &cfg).unwrap();
            let flat_grads: Vec<f64> = grads.iter().flat_map(|g| g.flat()).collect();
            let point = saes.flat_params();
            let f = |x: &[f64]| {
                let mut s = saes.clone();
                s.set_flat_params(x).unwrap();
                total_loss(&model, &s, &batch, &cfg).unwrap().total
            };
            let report = finite_diff_check(f, &flat_grads, &point, 1e-6, 1e-5).unwrap();
            assert!(
                report.passed,
                "{kind:?} nested={nested}: max rel {} at {}",
                report.max_rel_error, report.worst_index
            );
        }
    }
}
