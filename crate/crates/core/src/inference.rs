//! Rating prediction (exact MAP over the hidden leaves, mean-field, and
//! expected-value read-outs) and item ranking by expected energy decrease.

use std::collections::BTreeSet;

use crate::corpus::{Axis, RatingStore};
use crate::error::{Error, Result};
use crate::features::{FeatureScheme, LevelTables, SchemeKind};
use crate::joint_bm::{
    joint_gaussian_mu, joint_level_energies, prediction_context, JointModelParams,
};
use crate::math::{softmax_in_place, softplus};
use crate::neighbors::NeighborGraph;
use crate::user_bm::{hidden_args, hidden_posterior_tables, BmParams};

/// A single rating prediction: the MAP level, its posterior mass, the
/// expected-rating read-out and the full level posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub level: u8,
    pub confidence: f64,
    pub expected_value: f64,
    pub per_level: Vec<f64>,
}

fn prediction_from_masses(
    mut per_level: Vec<f64>,
    expected_override: Option<f64>,
) -> Prediction {
    softmax_in_place(&mut per_level);
    let mut best = 0usize;
    for (idx, &p) in per_level.iter().enumerate() {
        if p > per_level[best] {
            best = idx; // strict: ties keep the lowest level
        }
    }
    let expected = expected_override.unwrap_or_else(|| {
        per_level
            .iter()
            .enumerate()
            .map(|(idx, &p)| p * (idx + 1) as f64)
            .sum()
    });
    Prediction {
        level: (best + 1) as u8,
        confidence: per_level[best],
        expected_value: expected,
        per_level,
    }
}

fn without_item(ratings: &[(u32, u8)], item: u32) -> Vec<(u32, u8)> {
    ratings
        .iter()
        .copied()
        .filter(|&(i, _)| i != item)
        .collect()
}

/// Exact posterior over the candidate item's levels: the prediction node is
/// the root of a tree whose leaves are the hidden units, so each level's
/// mass is the visible potential times Π_k (1 + exp(hidden argument)),
/// summed out in closed form. Linear in d per level.
pub fn predict_map_exact(
    params: &BmParams,
    scheme: &FeatureScheme,
    user_ratings: &[(u32, u8)],
    item: u32,
) -> Result<Prediction> {
    if (item as usize) >= params.n_entities() {
        return Err(Error::ColdStart(format!(
            "item index {item} has no trained parameters"
        )));
    }
    let tables = scheme.tables();
    let ratings = without_item(user_ratings, item);
    let base = hidden_args(params, &tables, &ratings)?;
    let n = tables.n_levels();
    let mut log_mass = vec![0.0; n];
    for s_idx in 0..n {
        let f = tables.unary_at((s_idx + 1) as u8);
        let beta = params.input_bias_row(item);
        let mut v = 0.0;
        for a in 0..params.a() {
            v += beta[a] * f[a];
        }
        for &(i, slot) in params.pairs.adjacent(item) {
            if let Ok(pos) = ratings.binary_search_by_key(&i, |&(it, _)| it) {
                let fb = tables.pair_at((s_idx + 1) as u8, ratings[pos].1);
                for b in 0..params.pairs.b() {
                    v += params.pairs.value(slot as usize, b) * fb;
                }
            }
        }
        for (k, &bk) in base.iter().enumerate() {
            let gam = params.interaction_row(item, k);
            let mut dot = 0.0;
            for a in 0..params.a() {
                dot += gam[a] * f[a];
            }
            v += softplus(bk + dot);
        }
        log_mass[s_idx] = v;
    }
    Ok(prediction_from_masses(log_mass, None))
}

/// Mean-field per-level energies of a candidate item: unary term, hidden
/// term weighted by the clamped posterior, and pair terms against the
/// observed ratings.
pub(crate) fn meanfield_energies(
    params: &BmParams,
    tables: &LevelTables,
    posterior: &[f64],
    ratings: &[(u32, u8)],
    item: u32,
) -> Vec<f64> {
    let n = tables.n_levels();
    let mut eff = params.input_bias_row(item).to_vec();
    for (k, &p) in posterior.iter().enumerate() {
        let gam = params.interaction_row(item, k);
        for a in 0..params.a() {
            eff[a] += p * gam[a];
        }
    }
    let mut energies = vec![0.0; n];
    for s_idx in 0..n {
        let f = tables.unary_at((s_idx + 1) as u8);
        let mut v = 0.0;
        for a in 0..params.a() {
            v += eff[a] * f[a];
        }
        energies[s_idx] = -v;
    }
    for &(i, slot) in params.pairs.adjacent(item) {
        if let Ok(pos) = ratings.binary_search_by_key(&i, |&(it, _)| it) {
            let t = ratings[pos].1;
            let mut lam = 0.0;
            for b in 0..params.pairs.b() {
                lam += params.pairs.value(slot as usize, b);
            }
            for (s_idx, e) in energies.iter_mut().enumerate() {
                *e -= lam * tables.pair_at((s_idx + 1) as u8, t);
            }
        }
    }
    energies
}

/// Gaussian reconstruction mean of a candidate item under the clamped
/// posterior.
fn gaussian_mu(
    params: &BmParams,
    scheme: &FeatureScheme,
    posterior: &[f64],
    ratings: &[(u32, u8)],
    item: u32,
) -> f64 {
    let norm = scheme
        .normalizer()
        .expect("gaussian scheme carries a normalizer");
    let mut mu = params.input_bias_row(item)[0];
    for (k, &p) in posterior.iter().enumerate() {
        mu += p * params.interaction_row(item, k)[0];
    }
    for &(i, slot) in params.pairs.adjacent(item) {
        if let Ok(pos) = ratings.binary_search_by_key(&i, |&(it, _)| it) {
            mu += params.pairs.value(slot as usize, 0) * norm.transform(ratings[pos].1);
        }
    }
    mu
}

/// Mean-field prediction: replaces the hard hidden assignment by the soft
/// posterior, scores each level by the resulting energy and reads out both
/// the MAP level (lowest energy) and the expected rating. For the Gaussian
/// scheme the expected value is the reconstruction mean, inverse-normalized
/// and clamped to the level range.
pub fn predict_meanfield(
    params: &BmParams,
    scheme: &FeatureScheme,
    user_ratings: &[(u32, u8)],
    item: u32,
) -> Result<Prediction> {
    if (item as usize) >= params.n_entities() {
        return Err(Error::ColdStart(format!(
            "item index {item} has no trained parameters"
        )));
    }
    let tables = scheme.tables();
    let ratings = without_item(user_ratings, item);
    let posterior = hidden_posterior_tables(params, &tables, &ratings)?.probs;
    let energies = meanfield_energies(params, &tables, &posterior, &ratings, item);
    let expected = match scheme.kind() {
        SchemeKind::Gaussian => {
            let mu = gaussian_mu(params, scheme, &posterior, &ratings, item);
            Some(
                scheme
                    .normalizer()
                    .expect("gaussian scheme carries a normalizer")
                    .inverse(mu, scheme.n_levels()),
            )
        }
        _ => None,
    };
    let masses: Vec<f64> = energies.iter().map(|&e| -e).collect();
    Ok(prediction_from_masses(masses, expected))
}

/// Items rated by the user's top `n_similar` neighbours, minus the items
/// the user already rated. An isolated user yields an empty set.
pub fn candidate_items(
    store: &RatingStore,
    user_graph: &NeighborGraph,
    user: u32,
    n_similar: usize,
) -> Result<Vec<u32>> {
    if user_graph.axis != Axis::User {
        return Err(Error::InvalidArgument(
            "candidate generation takes a user-axis graph".into(),
        ));
    }
    if (user as usize) >= user_graph.n_entities() {
        return Err(Error::Index(format!("user {user} outside graph")));
    }
    let mut pool: BTreeSet<u32> = BTreeSet::new();
    for &(neighbor, _) in user_graph.neighbors_of(user).iter().take(n_similar) {
        for &(item, _) in store.user_ratings(neighbor) {
            pool.insert(item);
        }
    }
    for &(item, _) in store.user_ratings(user) {
        pool.remove(&item);
    }
    Ok(pool.into_iter().collect())
}

/// How a ranked list orders its scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreOrder {
    /// Lower expected energy ranks first.
    AscendingEnergy,
    /// Higher count ranks first (popularity baseline).
    DescendingCount,
}

/// An ordered recommendation list of (item, score) entries, ties broken by
/// lower item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(u32, f64)>,
    pub ordering: ScoreOrder,
}

impl RankedList {
    pub fn new(mut entries: Vec<(u32, f64)>, ordering: ScoreOrder) -> Self {
        match ordering {
            ScoreOrder::AscendingEnergy => entries.sort_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .expect("scores are finite")
                    .then(a.0.cmp(&b.0))
            }),
            ScoreOrder::DescendingCount => entries.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("scores are finite")
                    .then(a.0.cmp(&b.0))
            }),
        }
        Self { entries, ordering }
    }

    pub fn items(&self) -> Vec<u32> {
        self.entries.iter().map(|&(i, _)| i).collect()
    }

    /// Reverse the ranking in place (sort-direction sensitivity checks).
    pub fn invert(&mut self) {
        self.entries.reverse();
    }
}

/// Score each candidate by the posterior-weighted mean of its mean-field
/// level energies (the energy decrease its addition would bring), lowest
/// first.
pub fn rank_items(
    params: &BmParams,
    scheme: &FeatureScheme,
    user_ratings: &[(u32, u8)],
    candidates: &[u32],
) -> Result<RankedList> {
    let tables = scheme.tables();
    let posterior = hidden_posterior_tables(params, &tables, user_ratings)?.probs;
    let mut entries = Vec::with_capacity(candidates.len());
    for &j in candidates {
        if (j as usize) >= params.n_entities() {
            return Err(Error::Index(format!("candidate item {j} out of range")));
        }
        let energies = meanfield_energies(params, &tables, &posterior, user_ratings, j);
        let mut q: Vec<f64> = energies.iter().map(|&e| -e).collect();
        softmax_in_place(&mut q);
        let delta: f64 = q.iter().zip(&energies).map(|(&qi, &ei)| qi * ei).sum();
        entries.push((j, delta));
    }
    Ok(RankedList::new(entries, ScoreOrder::AscendingEnergy))
}

/// Joint prediction of the unrated pair (u, j): per-level masses from the
/// joint mean-field energy, with both sides' posteriors clamped.
pub fn predict_joint(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    store: &RatingStore,
    user: u32,
    item: u32,
) -> Result<Prediction> {
    joint.validate_for(store)?;
    let tables = scheme.tables();
    let (user_row, item_row, user_post, item_post) =
        prediction_context(joint, &tables, store, user, item)?;
    let energies = joint_level_energies(
        joint, &tables, &user_row, &item_row, user, item, &user_post, &item_post,
    );
    let expected = match scheme.kind() {
        SchemeKind::Gaussian => {
            let mu = joint_gaussian_mu(
                joint, scheme, &user_row, &item_row, user, item, &user_post, &item_post,
            );
            Some(
                scheme
                    .normalizer()
                    .expect("gaussian scheme carries a normalizer")
                    .inverse(mu, scheme.n_levels()),
            )
        }
        _ => None,
    };
    let masses: Vec<f64> = energies.iter().map(|&e| -e).collect();
    Ok(prediction_from_masses(masses, expected))
}
