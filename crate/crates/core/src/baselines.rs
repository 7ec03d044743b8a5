//! Comparison systems: SGD matrix factorization for incomplete data and
//! neighbourhood popularity ranking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Axis, RatingStore};
use crate::error::{Error, Result};
use crate::inference::{RankedList, ScoreOrder};
use crate::math::normal_sample;
use crate::neighbors::NeighborGraph;

/// Latent factor model fit to observed entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub rank: usize,
    pub global_mean: f64,
    /// n_users × rank, row-major.
    pub user_factors: Vec<f64>,
    /// n_items × rank, row-major.
    pub item_factors: Vec<f64>,
    n_users: usize,
    n_items: usize,
}

impl SvdFactors {
    fn user_row(&self, u: u32) -> &[f64] {
        let base = u as usize * self.rank;
        &self.user_factors[base..base + self.rank]
    }

    fn item_row(&self, i: u32) -> &[f64] {
        let base = i as usize * self.rank;
        &self.item_factors[base..base + self.rank]
    }
}

/// SGD on observed entries of `Σ (r − mean − p·q)² + l2(‖p‖² + ‖q‖²)`,
/// factors initialized from N(0, 0.01²). Deterministic under the seed.
pub fn svd_train(
    store: &RatingStore,
    rank: usize,
    learning_rate: f64,
    epochs: usize,
    l2: f64,
    seed: u64,
) -> Result<SvdFactors> {
    if rank < 1 {
        return Err(Error::InvalidArgument("svd rank must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = store.n_users();
    let n_items = store.n_items();
    let mut f = SvdFactors {
        rank,
        global_mean: store.mean_level(),
        user_factors: (0..n_users * rank)
            .map(|_| normal_sample(&mut rng, 0.01))
            .collect(),
        item_factors: (0..n_items * rank)
            .map(|_| normal_sample(&mut rng, 0.01))
            .collect(),
        n_users,
        n_items,
    };
    let triples: Vec<(u32, u32, f64)> = store
        .triples()
        .map(|t| (t.user, t.item, t.level as f64))
        .collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let (u, i, r) = triples[idx];
            let ub = u as usize * rank;
            let ib = i as usize * rank;
            let mut dot = 0.0;
            for k in 0..rank {
                dot += f.user_factors[ub + k] * f.item_factors[ib + k];
            }
            let err = r - f.global_mean - dot;
            for k in 0..rank {
                let pu = f.user_factors[ub + k];
                let qi = f.item_factors[ib + k];
                f.user_factors[ub + k] += learning_rate * (err * qi - l2 * pu);
                f.item_factors[ib + k] += learning_rate * (err * pu - l2 * qi);
            }
        }
        if f.user_factors.iter().any(|v| !v.is_finite())
            || f.item_factors.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(f)
}

/// Predicted rating `mean + p_u·q_i`, clamped to the level range.
pub fn svd_predict(factors: &SvdFactors, u: u32, i: u32, n_levels: usize) -> Result<f64> {
    if (u as usize) >= factors.n_users {
        return Err(Error::ColdStart(format!("user index {u} untrained")));
    }
    if (i as usize) >= factors.n_items {
        return Err(Error::ColdStart(format!("item index {i} untrained")));
    }
    let dot: f64 = factors
        .user_row(u)
        .iter()
        .zip(factors.item_row(i))
        .map(|(p, q)| p * q)
        .sum();
    Ok((factors.global_mean + dot).clamp(1.0, n_levels as f64))
}

/// Rank candidates by how many of the user's top `n_similar` neighbours
/// rated them, highest count first, ties by lower item id.
pub fn popularity_rank(
    store: &RatingStore,
    user_graph: &NeighborGraph,
    user: u32,
    n_similar: usize,
    candidates: &[u32],
) -> Result<RankedList> {
    if user_graph.axis != Axis::User {
        return Err(Error::InvalidArgument(
            "popularity ranking takes a user-axis graph".into(),
        ));
    }
    if (user as usize) >= user_graph.n_entities() {
        return Err(Error::Index(format!("user {user} outside graph")));
    }
    let mut counts = vec![0usize; store.n_items()];
    for &(neighbor, _) in user_graph.neighbors_of(user).iter().take(n_similar) {
        for &(item, _) in store.user_ratings(neighbor) {
            counts[item as usize] += 1;
        }
    }
    let entries: Vec<(u32, f64)> = candidates
        .iter()
        .map(|&i| (i, counts[i as usize] as f64))
        .collect();
    Ok(RankedList::new(entries, ScoreOrder::DescendingCount))
}
