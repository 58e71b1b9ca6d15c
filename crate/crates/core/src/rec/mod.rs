//! Two-tower recommenders: matrix factorization and an MLP scorer over
//! concatenated embeddings, with frozen-model scoring gradients and
//! ranking metrics.

mod train;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::math::{
    dot, relu, relu_derivative, sigmoid, sigmoid_derivative_from_output, DenseMatrix,
};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

pub use train::{train_recommender, EpochLog, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecommenderKind {
    Mf,
    Ncf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer<T> {
    /// `out × in`, row per output unit.
    pub weight: DenseMatrix<T>,
    pub bias: Vec<T>,
}

/// Gradients of the affinity score with respect to the two input
/// embeddings, holding model parameters fixed.
#[derive(Clone, Debug)]
pub struct ScoreGradients<T> {
    pub d_user: Vec<T>,
    pub d_item: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommenderModel<T> {
    kind: RecommenderKind,
    d: usize,
    user_embeddings: DenseMatrix<T>,
    item_embeddings: DenseMatrix<T>,
    /// MLP scorer layers; empty for MF.
    scorer: Vec<MlpLayer<T>>,
}

impl<T: Scalar> RecommenderModel<T> {
    pub fn new_mf(n_users: usize, n_items: usize, d: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let s = lit::<T>(0.05);
        RecommenderModel {
            kind: RecommenderKind::Mf,
            d,
            user_embeddings: DenseMatrix::random_uniform(n_users, d, -s, s, &mut rng),
            item_embeddings: DenseMatrix::random_uniform(n_items, d, -s, s, &mut rng),
            scorer: Vec::new(),
        }
    }

    /// MLP scorer over `[e_u ; e_i]` with ReLU hidden layers of the given
    /// widths and a linear output unit.
    pub fn new_ncf(n_users: usize, n_items: usize, d: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let s = lit::<T>(0.05);
        let user_embeddings = DenseMatrix::random_uniform(n_users, d, -s, s, &mut rng);
        let item_embeddings = DenseMatrix::random_uniform(n_items, d, -s, s, &mut rng);
        let mut scorer = Vec::new();
        let mut fan_in = 2 * d;
        for &width in hidden.iter().chain(std::iter::once(&1)) {
            // Xavier-uniform
            let limit = lit::<T>((6.0 / (fan_in + width) as f64).sqrt());
            scorer.push(MlpLayer {
                weight: DenseMatrix::random_uniform(width, fan_in, -limit, limit, &mut rng),
                bias: vec![T::zero(); width],
            });
            fan_in = width;
        }
        RecommenderModel {
            kind: RecommenderKind::Ncf,
            d,
            user_embeddings,
            item_embeddings,
            scorer,
        }
    }

    pub fn from_parts(
        kind: RecommenderKind,
        user_embeddings: DenseMatrix<T>,
        item_embeddings: DenseMatrix<T>,
        scorer: Vec<MlpLayer<T>>,
    ) -> Result<Self> {
        if user_embeddings.cols() != item_embeddings.cols() {
            return Err(Error::dim(
                "tower dimensionality",
                user_embeddings.cols(),
                item_embeddings.cols(),
            ));
        }
        if kind == RecommenderKind::Mf && !scorer.is_empty() {
            return Err(Error::Config("MF model carries scorer parameters".into()));
        }
        if kind == RecommenderKind::Ncf && scorer.is_empty() {
            return Err(Error::Config("NCF model missing scorer parameters".into()));
        }
        let d = user_embeddings.cols();
        Ok(RecommenderModel {
            kind,
            d,
            user_embeddings,
            item_embeddings,
            scorer,
        })
    }

    pub fn kind(&self) -> RecommenderKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_users(&self) -> usize {
        self.user_embeddings.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.rows()
    }

    pub fn user_embeddings(&self) -> &DenseMatrix<T> {
        &self.user_embeddings
    }

    pub fn item_embeddings(&self) -> &DenseMatrix<T> {
        &self.item_embeddings
    }

    pub fn scorer(&self) -> &[MlpLayer<T>] {
        &self.scorer
    }

    pub fn user_embedding(&self, u: usize) -> &[T] {
        self.user_embeddings.row(u)
    }

    pub fn item_embedding(&self, i: usize) -> &[T] {
        self.item_embeddings.row(i)
    }

    fn check_dims(&self, e_u: &[T], e_i: &[T]) -> Result<()> {
        if e_u.len() != self.d {
            return Err(Error::dim("user embedding", self.d, e_u.len()));
        }
        if e_i.len() != self.d {
            return Err(Error::dim("item embedding", self.d, e_i.len()));
        }
        Ok(())
    }

    /// Raw scorer output before the sigmoid.
    pub fn logit(&self, e_u: &[T], e_i: &[T]) -> Result<T> {
        self.check_dims(e_u, e_i)?;
        Ok(match self.kind {
            RecommenderKind::Mf => dot(e_u, e_i),
            RecommenderKind::Ncf => self.ncf_forward(e_u, e_i),
        })
    }

    /// Affinity in (0, 1).
    pub fn score(&self, e_u: &[T], e_i: &[T]) -> Result<T> {
        Ok(sigmoid(self.logit(e_u, e_i)?))
    }

    /// Affinity plus exact analytic gradients w.r.t. both embeddings,
    /// treating all model parameters as constants.
    pub fn score_with_gradients(&self, e_u: &[T], e_i: &[T]) -> Result<(T, ScoreGradients<T>)> {
        self.check_dims(e_u, e_i)?;
        match self.kind {
            RecommenderKind::Mf => {
                let y = sigmoid(dot(e_u, e_i));
                let dy = sigmoid_derivative_from_output(y);
                let d_user = e_i.iter().map(|&v| dy * v).collect();
                let d_item = e_u.iter().map(|&v| dy * v).collect();
                Ok((y, ScoreGradients { d_user, d_item }))
            }
            RecommenderKind::Ncf => {
                let (logit, pre, _) = self.ncf_forward_cached(e_u, e_i);
                let y = sigmoid(logit);
                // delta through the linear output unit
                let mut delta = vec![sigmoid_derivative_from_output(y)];
                for l in (0..self.scorer.len()).rev() {
                    let back = self.scorer[l].weight.matvec_t(&delta);
                    delta = if l == 0 {
                        back
                    } else {
                        back.iter()
                            .zip(&pre[l - 1])
                            .map(|(&g, &a)| g * relu_derivative(a))
                            .collect()
                    };
                }
                let (du, di) = delta.split_at(self.d);
                Ok((
                    y,
                    ScoreGradients {
                        d_user: du.to_vec(),
                        d_item: di.to_vec(),
                    },
                ))
            }
        }
    }

    fn ncf_forward(&self, e_u: &[T], e_i: &[T]) -> T {
        self.ncf_forward_cached(e_u, e_i).0
    }

    /// Forward pass caching pre-activations and hidden outputs per layer.
    fn ncf_forward_cached(&self, e_u: &[T], e_i: &[T]) -> (T, Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut x: Vec<T> = Vec::with_capacity(2 * self.d);
        x.extend_from_slice(e_u);
        x.extend_from_slice(e_i);
        let mut pre = Vec::with_capacity(self.scorer.len());
        let mut post = Vec::with_capacity(self.scorer.len());
        let last = self.scorer.len() - 1;
        let mut h = x;
        for (l, layer) in self.scorer.iter().enumerate() {
            let mut a = layer.weight.matvec(&h);
            for (v, &b) in a.iter_mut().zip(&layer.bias) {
                *v = *v + b;
            }
            if l == last {
                let logit = a[0];
                pre.push(a);
                return (logit, pre, post);
            }
            let activated: Vec<T> = a.iter().map(|&v| relu(v)).collect();
            pre.push(a);
            post.push(activated.clone());
            h = activated;
        }
        unreachable!("scorer has at least one layer")
    }

    /// Scores for every item against the given user embedding.
    pub fn score_all_items(&self, e_u: &[T]) -> Vec<T> {
        self.score_against(e_u, &self.item_embeddings)
    }

    /// Scores of `e_u` against an arbitrary item table through this
    /// model's scorer (used with reconstructed or edited embeddings).
    pub fn score_against(&self, e_u: &[T], item_table: &DenseMatrix<T>) -> Vec<T> {
        match self.kind {
            RecommenderKind::Mf => item_table.matvec(e_u).into_iter().map(sigmoid).collect(),
            RecommenderKind::Ncf => (0..item_table.rows())
                .map(|i| sigmoid(self.ncf_forward(e_u, item_table.row(i))))
                .collect(),
        }
    }

    /// Top `n` items for `user` by affinity, ties broken by ascending
    /// item index. `exclude` must be sorted ascending.
    pub fn top_n(&self, user: usize, n: usize, exclude: &[usize]) -> Vec<usize> {
        let scores = self.score_all_items(self.user_embeddings.row(user));
        ranked_items(&scores, exclude, n)
    }

    /// Serialized parameter blocks, used by fingerprinting and tests.
    pub fn parameter_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    /// Shape and finiteness checks for deserialized checkpoints.
    pub fn validate(&self) -> Result<()> {
        self.user_embeddings.validate("user embeddings")?;
        self.item_embeddings.validate("item embeddings")?;
        if self.user_embeddings.cols() != self.d || self.item_embeddings.cols() != self.d {
            return Err(Error::dim("embedding width", self.d, self.user_embeddings.cols()));
        }
        match self.kind {
            RecommenderKind::Mf => {
                if !self.scorer.is_empty() {
                    return Err(Error::Config("MF model carries scorer parameters".into()));
                }
            }
            RecommenderKind::Ncf => {
                if self.scorer.is_empty() {
                    return Err(Error::Config("NCF model missing scorer parameters".into()));
                }
                let mut fan_in = 2 * self.d;
                for (l, layer) in self.scorer.iter().enumerate() {
                    layer.weight.validate(&format!("scorer layer {l}"))?;
                    if layer.weight.cols() != fan_in || layer.bias.len() != layer.weight.rows() {
                        return Err(Error::dim(
                            format!("scorer layer {l} shape"),
                            fan_in,
                            layer.weight.cols(),
                        ));
                    }
                    if layer.bias.iter().any(|b| !b.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "non-finite bias in scorer layer {l}"
                        )));
                    }
                    fan_in = layer.weight.rows();
                }
                if fan_in != 1 {
                    return Err(Error::dim("scorer output width", 1, fan_in));
                }
            }
        }
        Ok(())
    }
}

/// Sort item indices by score descending, ties by ascending index,
/// skipping `exclude` (sorted ascending), truncated to `n`.
pub fn ranked_items<T: Scalar>(scores: &[T], exclude: &[usize], n: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    items.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    items.truncate(n);
    items
}

/// Mean percentile rank of held-out positives; 0 is best, ties take the
/// midpoint. The candidate pool for each user is every item outside the
/// user's training positives.
pub fn mpr<T: Scalar>(
    model: &RecommenderModel<T>,
    dataset: &InteractionDataset,
    split: Split,
) -> Result<T> {
    if dataset.n_users != model.n_users() || dataset.n_items != model.n_items() {
        return Err(Error::dim(
            "mpr model/dataset users",
            dataset.n_users,
            model.n_users(),
        ));
    }
    let train_by_user = dataset.train_positives_by_user();
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users];
    let mut total = 0usize;
    for p in dataset.split_positives(split) {
        held[p.user].push(p.item);
        total += 1;
    }
    if total == 0 {
        return Err(Error::Data(format!("split {split:?} is empty")));
    }
    let mut sum = T::zero();
    for u in 0..dataset.n_users {
        if held[u].is_empty() {
            continue;
        }
        let scores = model.score_all_items(model.user_embedding(u));
        let exclude = &train_by_user[u];
        let candidates: Vec<usize> = (0..dataset.n_items)
            .filter(|i| exclude.binary_search(i).is_err())
            .collect();
        let c = candidates.len();
        for &target in &held[u] {
            let s = scores[target];
            if c <= 1 {
                continue; // lone candidate ranks first: percentile 0
            }
            let mut higher = 0usize;
            let mut tied = 0usize;
            for &i in &candidates {
                if i == target {
                    continue;
                }
                if scores[i] > s {
                    higher += 1;
                } else if scores[i] == s {
                    tied += 1;
                }
            }
            let pct = (higher as f64 + 0.5 * tied as f64) / (c - 1) as f64;
            sum = sum + lit::<T>(pct);
        }
    }
    Ok(sum / lit::<T>(total as f64))
}
