//! Synthetic corpus generation with controllable sparsity and a text channel
//! correlated with the latent factors, so text-derived embeddings carry real
//! ranking signal at desk scale.

use crate::data::{InteractionDataset, ItemCorpus, ItemId};
use crate::error::{Error, Result};
use crate::numeric::rng::RngStream;
use crate::{Matrix, Real, Vector};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub m_items: usize,
    pub latent_dim: usize,
    /// Desired mean interaction count per user; must be at least 2.
    pub target_avg_interactions: f64,
    /// Total token vocabulary split evenly across latent dimensions.
    pub text_vocab: usize,
    /// Probability that an emitted token is replaced by a random one.
    pub noise: f64,
}

/// Latent state behind a generated corpus, kept for analysis and property
/// tests; never visible to the training loop.
#[derive(Debug, Clone)]
pub struct SyntheticGroundTruth {
    pub user_factors: Matrix,
    pub item_factors: Matrix,
    /// Latent dimension each item's factor vector is concentrated on.
    pub dominant_dim: Vec<usize>,
    pub secondary_dim: Vec<usize>,
}

/// Tokens appended for an item's dominant dimension; the first two act as a
/// shared anchor across items of the same dimension.
const DOMINANT_TOKENS: usize = 4;
const SECONDARY_TOKENS: usize = 2;

pub fn generate_synthetic(
    spec: &SyntheticSpec,
    rng: &mut RngStream,
) -> Result<(InteractionDataset, ItemCorpus, SyntheticGroundTruth)> {
    if spec.target_avg_interactions < 2.0 {
        return Err(Error::invalid(format!(
            "target_avg_interactions {} would leave users without a holdable test item",
            spec.target_avg_interactions
        )));
    }
    if spec.latent_dim == 0 || spec.n_users == 0 || spec.m_items == 0 {
        return Err(Error::invalid("empty synthetic spec"));
    }
    if spec.m_items < 8 {
        return Err(Error::invalid("need at least 8 items for negatives"));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::invalid("noise must be in [0, 1]"));
    }
    let k = spec.latent_dim;
    let words_per_dim = (spec.text_vocab / k).max(1);

    // item factors: a unit bump on one dimension plus small isotropic noise
    let mut item_factors = Matrix::zeros(spec.m_items, k);
    let mut dominant_dim = Vec::with_capacity(spec.m_items);
    let mut secondary_dim = Vec::with_capacity(spec.m_items);
    for i in 0..spec.m_items {
        let dim = rng.index(k);
        let mut row = rng.gaussian_vector::<Real>(k, 0.0, 0.25);
        row[dim] += 1.0;
        let sec = (0..k)
            .filter(|&d| d != dim)
            .max_by(|&a, &b| row[a].abs().partial_cmp(&row[b].abs()).unwrap())
            .unwrap_or(dim);
        item_factors.set_row(i, &row)?;
        dominant_dim.push(dim);
        secondary_dim.push(sec);
    }

    // user factors mirror the item construction
    let mut user_factors = Matrix::zeros(spec.n_users, k);
    for u in 0..spec.n_users {
        let dim = rng.index(k);
        let mut row = rng.gaussian_vector::<Real>(k, 0.0, 0.25);
        row[dim] += 1.0;
        user_factors.set_row(u, &row)?;
    }

    // interactions: per-user count from a geometric tail (skewed, so the
    // corpus has genuinely sparse and dense users), items accepted with
    // probability sigmoid(sharpness * (affinity - threshold))
    let tail_mean = spec.target_avg_interactions - 2.0;
    let p_geom = 1.0 / (tail_mean + 1.0);
    let cap = (spec.m_items / 4).max(2);
    let mut per_user: Vec<Vec<ItemId>> = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let count = (2 + rng.geometric(p_geom)).min(cap);
        let p_u = user_factors.row_vector(u);
        let mut chosen: Vec<ItemId> = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let max_attempts = 400 * count;
        while chosen.len() < count && attempts < max_attempts {
            attempts += 1;
            let i = rng.index(spec.m_items);
            if chosen.contains(&i) {
                continue;
            }
            let affinity = p_u.dot(&item_factors.row_vector(i))?;
            let accept = crate::numeric::ops::sigmoid(4.0 * (affinity - 0.5));
            if rng.uniform_f64() < accept {
                chosen.push(i);
            }
        }
        // uniform fill if acceptance sampling stalled
        while chosen.len() < count {
            let i = rng.index(spec.m_items);
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        per_user.push(chosen);
    }

    // text: anchor tokens of the dominant dimension, one item-varying token,
    // and a couple of secondary-dimension tokens
    let mut corpus = ItemCorpus::new(spec.m_items);
    for i in 0..spec.m_items {
        let mut tokens: Vec<String> = Vec::with_capacity(DOMINANT_TOKENS + SECONDARY_TOKENS);
        let dom = dominant_dim[i];
        for j in 0..DOMINANT_TOKENS - 1 {
            tokens.push(token(dom, j % words_per_dim, words_per_dim));
        }
        tokens.push(token(dom, i % words_per_dim, words_per_dim));
        let sec = secondary_dim[i];
        for j in 0..SECONDARY_TOKENS {
            tokens.push(token(sec, j % words_per_dim, words_per_dim));
        }
        if spec.noise > 0.0 {
            for t in &mut tokens {
                if rng.uniform_f64() < spec.noise {
                    let dim = rng.index(k);
                    *t = token(dim, rng.index(words_per_dim), words_per_dim);
                }
            }
        }
        corpus.set_text(i, tokens.join(" "));
    }

    let dataset = InteractionDataset::from_per_user(spec.m_items, per_user, None)?;
    Ok((
        dataset,
        corpus,
        SyntheticGroundTruth {
            user_factors,
            item_factors,
            dominant_dim,
            secondary_dim,
        },
    ))
}

fn token(dim: usize, j: usize, words_per_dim: usize) -> String {
    format!("t{}", dim * words_per_dim + j)
}

/// Affinity of a user/item pair under the ground-truth factors.
pub fn true_affinity(gt: &SyntheticGroundTruth, u: usize, i: usize) -> Result<Real> {
    let pu: Vector = gt.user_factors.row_vector(u);
    let qi: Vector = gt.item_factors.row_vector(i);
    pu.dot(&qi)
}
