//! Sparse autoencoder over recommender embeddings: linear encoder with
//! ReLU bottleneck, tied linear decoder, optional nested (matryoshka)
//! dictionary prefixes, and a prediction-aware training objective
//! backpropagated through the frozen recommender.

mod loss;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{relu, DenseMatrix};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

pub use loss::{
    loss_emb, loss_pred, loss_sparsity, total_loss, total_loss_with_grads, ActivationStat,
    BatchSample, LossBreakdown, LossConfig, SaeGrads, SparsityStats,
};
pub use train::{
    four_level_sizes, train_sae, SaeEpochStats, SaeNeuronStats, SaeTrainConfig, SaeTrainReport,
};

/// Tied-weight sparse autoencoder. The decoder weight is the transpose
/// of the stored encoder weight at all times (a single array is stored).
///
/// `nested_sizes`, when present, lists strictly ascending dictionary
/// prefix sizes ending at `m`; each prefix reconstructs independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeModel<T> {
    w: DenseMatrix<T>,
    b_enc: Vec<T>,
    b_dec: Vec<T>,
    nested_sizes: Option<Vec<usize>>,
}

/// Cached encoder forward pass for one embedding.
#[derive(Clone, Debug)]
pub(crate) struct Forward<T> {
    pub pre: Vec<T>,
    pub z: Vec<T>,
}

fn validate_nested(nested: &Option<Vec<usize>>, m: usize) -> Result<()> {
    if let Some(sizes) = nested {
        if sizes.is_empty() {
            return Err(Error::Config("nested_sizes must not be empty".into()));
        }
        if !sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "nested_sizes {sizes:?} not strictly ascending"
            )));
        }
        if sizes[0] == 0 || *sizes.last().unwrap() != m {
            return Err(Error::Config(format!(
                "nested_sizes {sizes:?} must start above 0 and end at m = {m}"
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> SaeModel<T> {
    /// Fresh model: encoder rows uniform in `[−1/√d, 1/√d]`, zero encoder
    /// bias, decoder bias set to `center` (normally the mean training
    /// embedding).
    pub fn init(
        m: usize,
        d: usize,
        nested_sizes: Option<Vec<usize>>,
        center: Vec<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::Config("m and d must be ≥ 1".into()));
        }
        if center.len() != d {
            return Err(Error::dim("decoder bias", d, center.len()));
        }
        validate_nested(&nested_sizes, m)?;
        let limit = lit::<T>(1.0 / (d as f64).sqrt());
        Ok(SaeModel {
            w: DenseMatrix::random_uniform(m, d, -limit, limit, rng),
            b_enc: vec![T::zero(); m],
            b_dec: center,
            nested_sizes,
        })
    }

    pub fn from_parts(
        w: DenseMatrix<T>,
        b_enc: Vec<T>,
        b_dec: Vec<T>,
        nested_sizes: Option<Vec<usize>>,
    ) -> Result<Self> {
        if b_enc.len() != w.rows() {
            return Err(Error::dim("b_enc", w.rows(), b_enc.len()));
        }
        if b_dec.len() != w.cols() {
            return Err(Error::dim("b_dec", w.cols(), b_dec.len()));
        }
        validate_nested(&nested_sizes, w.rows())?;
        Ok(SaeModel {
            w,
            b_enc,
            b_dec,
            nested_sizes,
        })
    }

    pub fn m(&self) -> usize {
        self.w.rows()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }

    pub fn weight(&self) -> &DenseMatrix<T> {
        &self.w
    }

    pub fn encoder_bias(&self) -> &[T] {
        &self.b_enc
    }

    pub fn decoder_bias(&self) -> &[T] {
        &self.b_dec
    }

    pub fn nested_sizes(&self) -> Option<&[usize]> {
        self.nested_sizes.as_deref()
    }

    /// Dictionary prefix sizes, one per level; `[m]` when un-nested.
    pub fn levels(&self) -> Vec<usize> {
        self.nested_sizes
            .clone()
            .unwrap_or_else(|| vec![self.m()])
    }

    pub fn n_levels(&self) -> usize {
        self.nested_sizes.as_ref().map_or(1, Vec::len)
    }

    /// Prefix size for a 1-based `level` index; `None` means the full
    /// dictionary.
    pub fn level_prefix(&self, level: Option<usize>) -> Result<usize> {
        match level {
            None => Ok(self.m()),
            Some(l) => {
                let levels = self.levels();
                if l == 0 || l > levels.len() {
                    return Err(Error::Config(format!(
                        "level {l} invalid; valid levels are 1..={}",
                        levels.len()
                    )));
                }
                Ok(levels[l - 1])
            }
        }
    }

    pub(crate) fn forward(&self, e: &[T]) -> Forward<T> {
        let mut pre = self.w.matvec(e);
        for (p, &b) in pre.iter_mut().zip(&self.b_enc) {
            *p = *p + b;
        }
        let z = pre.iter().map(|&p| relu(p)).collect();
        Forward { pre, z }
    }

    /// `z = relu(W·e + b_enc)`.
    pub fn encode(&self, e: &[T]) -> Result<Vec<T>> {
        if e.len() != self.d() {
            return Err(Error::dim("encode input", self.d(), e.len()));
        }
        Ok(self.forward(e).z)
    }

    pub(crate) fn decode_prefix(&self, z: &[T], prefix: usize) -> Vec<T> {
        let mut out = self.b_dec.clone();
        for (j, &zj) in z.iter().enumerate().take(prefix) {
            if zj == T::zero() {
                continue;
            }
            for (o, &wjk) in out.iter_mut().zip(self.w.row(j)) {
                *o = *o + zj * wjk;
            }
        }
        out
    }

    /// `ẽ = Wᵀ·z_masked + b_dec`, masking latents past the level's
    /// prefix. `level` is 1-based; `None` decodes with the full
    /// dictionary.
    pub fn decode(&self, z: &[T], level: Option<usize>) -> Result<Vec<T>> {
        if z.len() != self.m() {
            return Err(Error::dim("decode input", self.m(), z.len()));
        }
        let prefix = self.level_prefix(level)?;
        Ok(self.decode_prefix(z, prefix))
    }

    /// `decode(encode(e))` at the given level.
    pub fn reconstruct(&self, e: &[T], level: Option<usize>) -> Result<Vec<T>> {
        let z = self.encode(e)?;
        self.decode(&z, level)
    }

    pub fn params_len(&self) -> usize {
        self.w.data().len() + self.b_enc.len() + self.b_dec.len()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut DenseMatrix<T>, &mut Vec<T>, &mut Vec<T>) {
        (&mut self.w, &mut self.b_enc, &mut self.b_dec)
    }

    /// Shape, nesting, and finiteness checks for deserialized
    /// checkpoints.
    pub fn validate(&self) -> Result<()> {
        self.w.validate("sae encoder weight")?;
        if self.b_enc.len() != self.m() {
            return Err(Error::dim("b_enc", self.m(), self.b_enc.len()));
        }
        if self.b_dec.len() != self.d() {
            return Err(Error::dim("b_dec", self.d(), self.b_dec.len()));
        }
        if self.b_enc.iter().chain(&self.b_dec).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite SAE bias".into()));
        }
        validate_nested(&self.nested_sizes, self.m())
    }

    /// Parameters flattened as `[w, b_enc, b_dec]`, for gradient checks.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.params_len());
        out.extend_from_slice(self.w.data());
        out.extend_from_slice(&self.b_enc);
        out.extend_from_slice(&self.b_dec);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.params_len() {
            return Err(Error::dim("flat params", self.params_len(), flat.len()));
        }
        let nw = self.w.data().len();
        let m = self.m();
        self.w.data_mut().copy_from_slice(&flat[..nw]);
        self.b_enc.copy_from_slice(&flat[nw..nw + m]);
        self.b_dec.copy_from_slice(&flat[nw + m..]);
        Ok(())
    }
}

/// One shared SAE serving both towers (the default), or one per tower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SaePair<T> {
    Shared(SaeModel<T>),
    PerTower { user: SaeModel<T>, item: SaeModel<T> },
}

impl<T: Scalar> SaePair<T> {
    pub fn is_shared(&self) -> bool {
        matches!(self, SaePair::Shared(_))
    }

    pub fn user(&self) -> &SaeModel<T> {
        match self {
            SaePair::Shared(s) => s,
            SaePair::PerTower { user, .. } => user,
        }
    }

    pub fn item(&self) -> &SaeModel<T> {
        match self {
            SaePair::Shared(s) => s,
            SaePair::PerTower { item, .. } => item,
        }
    }

    /// Distinct models: one when shared, two otherwise.
    pub fn models(&self) -> Vec<&SaeModel<T>> {
        match self {
            SaePair::Shared(s) => vec![s],
            SaePair::PerTower { user, item } => vec![user, item],
        }
    }

    pub fn models_mut(&mut self) -> Vec<&mut SaeModel<T>> {
        match self {
            SaePair::Shared(s) => vec![s],
            SaePair::PerTower { user, item } => vec![user, item],
        }
    }

    /// Flattened parameters of all distinct models, concatenated.
    pub fn flat_params(&self) -> Vec<T> {
        self.models().iter().flat_map(|s| s.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let mut offset = 0;
        for s in self.models_mut() {
            let len = s.params_len();
            s.set_flat_params(&flat[offset..offset + len])?;
            offset += len;
        }
        if offset != flat.len() {
            return Err(Error::dim("pair flat params", offset, flat.len()));
        }
        Ok(())
    }
}
