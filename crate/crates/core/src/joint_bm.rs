//! Joint modelling of users and items: every rating is co-generated by a
//! user-side and an item-side process, trained by alternating block SGD
//! with the opposite side's hidden posteriors clamped as soft values.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::time::Instant;

use crate::corpus::{Axis, RatingStore};
use crate::error::{Error, Result};
use crate::features::{FeatureScheme, LevelTables, SchemeKind};
use crate::inference;
use crate::learning::{
    probe_objective, run_one_epoch, EpochStats, GradientAccumulator, Patience, PhaseExternals,
    TrainConfig, TrainMethod,
};
use crate::neighbors::NeighborGraph;
use crate::user_bm::{
    hidden_posterior_tables, negative_energy, BmParams, ExternalRow, PairWeights,
};

/// User-side plus item-side parameter sets. The item side has the same
/// shape with the axes transposed: its input entities are users and its
/// pair weights live on user pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModelParams {
    pub user_side: BmParams,
    pub item_side: BmParams,
}

impl JointModelParams {
    pub fn validate_for(&self, store: &RatingStore) -> Result<()> {
        if self.user_side.n_entities() != store.n_items() {
            return Err(Error::Shape(format!(
                "user side covers {} items, store has {}",
                self.user_side.n_entities(),
                store.n_items()
            )));
        }
        if self.item_side.n_entities() != store.n_users() {
            return Err(Error::Shape(format!(
                "item side covers {} users, store has {}",
                self.item_side.n_entities(),
                store.n_users()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JointTrainConfig {
    pub base: TrainConfig,
    /// Item-side hidden layer width d'.
    pub d_item: usize,
    /// Number of user-phase/item-phase alternations.
    pub alternations: usize,
    /// SGD epochs per phase.
    pub epochs_per_phase: usize,
    /// Keep the item side at zero and skip its update phase; the joint
    /// model then reduces to the user-centric one bit for bit.
    pub freeze_item: bool,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            d_item: 20,
            alternations: 5,
            epochs_per_phase: 1,
            freeze_item: false,
        }
    }
}

/// Negative energy of the entire system at full hidden configurations:
/// the sum of user-side row energies and item-side column energies. Each
/// rating's unary features contribute once per side.
pub fn joint_negative_energy(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    store: &RatingStore,
    user_hidden: &[Vec<bool>],
    item_hidden: &[Vec<bool>],
) -> Result<f64> {
    joint.validate_for(store)?;
    if user_hidden.len() != store.n_users() || item_hidden.len() != store.n_items() {
        return Err(Error::Shape(format!(
            "hidden configurations for {} users and {} items required",
            store.n_users(),
            store.n_items()
        )));
    }
    let mut total = 0.0;
    for u in 0..store.n_users() {
        total += negative_energy(
            &joint.user_side,
            scheme,
            store.user_ratings(u as u32),
            &user_hidden[u],
        )?;
    }
    for i in 0..store.n_items() {
        total += negative_energy(
            &joint.item_side,
            scheme,
            store.item_ratings(i as u32),
            &item_hidden[i],
        )?;
    }
    Ok(total)
}

/// Per-level mean-field energies of the prediction node (u, j): both sides'
/// unary terms, both hidden terms weighted by the clamped posteriors, and
/// both pair terms against observed neighbours.
pub(crate) fn joint_level_energies(
    joint: &JointModelParams,
    tables: &LevelTables,
    user_row: &[(u32, u8)],
    item_row: &[(u32, u8)],
    u: u32,
    j: u32,
    user_post: &[f64],
    item_post: &[f64],
) -> Vec<f64> {
    let n = tables.n_levels();
    let us = &joint.user_side;
    let is = &joint.item_side;
    let a = us.a();

    // fold both unary rows and both posterior-weighted interaction rows
    // into one effective feature-space vector
    let mut eff = vec![0.0; a];
    let beta_j = us.input_bias_row(j);
    let eta_u = is.input_bias_row(u);
    for idx in 0..a {
        eff[idx] = beta_j[idx] + eta_u[idx];
    }
    for (k, &p) in user_post.iter().enumerate() {
        let gam = us.interaction_row(j, k);
        for idx in 0..a {
            eff[idx] += p * gam[idx];
        }
    }
    for (k, &p) in item_post.iter().enumerate() {
        let nu = is.interaction_row(u, k);
        for idx in 0..a {
            eff[idx] += p * nu[idx];
        }
    }

    let mut energies = vec![0.0; n];
    for s_idx in 0..n {
        let f = tables.unary_at((s_idx + 1) as u8);
        let mut v = 0.0;
        for idx in 0..a {
            v += eff[idx] * f[idx];
        }
        energies[s_idx] = -v;
    }
    // item-pair weights against the user's rated items
    for &(i, slot) in us.pairs.adjacent(j) {
        if let Ok(pos) = user_row.binary_search_by_key(&i, |&(it, _)| it) {
            let t = user_row[pos].1;
            let mut lam = 0.0;
            for b in 0..us.pairs.b() {
                lam += us.pairs.value(slot as usize, b);
            }
            for (s_idx, e) in energies.iter_mut().enumerate() {
                *e -= lam * tables.pair_at((s_idx + 1) as u8, t);
            }
        }
    }
    // user-pair weights against the item's observed raters
    for &(v, slot) in is.pairs.adjacent(u) {
        if let Ok(pos) = item_row.binary_search_by_key(&v, |&(it, _)| it) {
            let t = item_row[pos].1;
            let mut om = 0.0;
            for b in 0..is.pairs.b() {
                om += is.pairs.value(slot as usize, b);
            }
            for (s_idx, e) in energies.iter_mut().enumerate() {
                *e -= om * tables.pair_at((s_idx + 1) as u8, t);
            }
        }
    }
    energies
}

/// Reconstruction mean of the prediction node under the Gaussian scheme:
/// the sum of both sides' linear coefficients.
pub(crate) fn joint_gaussian_mu(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    user_row: &[(u32, u8)],
    item_row: &[(u32, u8)],
    u: u32,
    j: u32,
    user_post: &[f64],
    item_post: &[f64],
) -> f64 {
    let norm = scheme
        .normalizer()
        .expect("gaussian scheme carries a normalizer");
    let us = &joint.user_side;
    let is = &joint.item_side;
    let mut mu = us.input_bias_row(j)[0] + is.input_bias_row(u)[0];
    for (k, &p) in user_post.iter().enumerate() {
        mu += p * us.interaction_row(j, k)[0];
    }
    for (k, &p) in item_post.iter().enumerate() {
        mu += p * is.interaction_row(u, k)[0];
    }
    for &(i, slot) in us.pairs.adjacent(j) {
        if let Ok(pos) = user_row.binary_search_by_key(&i, |&(it, _)| it) {
            mu += us.pairs.value(slot as usize, 0) * norm.transform(user_row[pos].1);
        }
    }
    for &(v, slot) in is.pairs.adjacent(u) {
        if let Ok(pos) = item_row.binary_search_by_key(&v, |&(it, _)| it) {
            mu += is.pairs.value(slot as usize, 0) * norm.transform(item_row[pos].1);
        }
    }
    mu
}

/// Rows of user u and item j with any (u, j) rating removed, plus both
/// clamped hidden posteriors. Cold-start error when either row is empty.
pub(crate) fn prediction_context(
    joint: &JointModelParams,
    tables: &LevelTables,
    store: &RatingStore,
    u: u32,
    j: u32,
) -> Result<(Vec<(u32, u8)>, Vec<(u32, u8)>, Vec<f64>, Vec<f64>)> {
    if (u as usize) >= store.n_users() {
        return Err(Error::ColdStart(format!("user index {u} unseen in training")));
    }
    if (j as usize) >= store.n_items() {
        return Err(Error::ColdStart(format!("item index {j} unseen in training")));
    }
    let user_row: Vec<(u32, u8)> = store
        .user_ratings(u)
        .iter()
        .copied()
        .filter(|&(i, _)| i != j)
        .collect();
    let item_row: Vec<(u32, u8)> = store
        .item_ratings(j)
        .iter()
        .copied()
        .filter(|&(v, _)| v != u)
        .collect();
    if user_row.is_empty() {
        return Err(Error::ColdStart(format!("user {u} has no training ratings")));
    }
    if item_row.is_empty() {
        return Err(Error::ColdStart(format!("item {j} has no training ratings")));
    }
    let user_post = hidden_posterior_tables(&joint.user_side, tables, &user_row)?.probs;
    let item_post = hidden_posterior_tables(&joint.item_side, tables, &item_row)?.probs;
    Ok((user_row, item_row, user_post, item_post))
}

/// Mean-field energy of rating candidate `level` on the unrated pair
/// (u, j), with both sides' hidden posteriors clamped from the training
/// rows.
pub fn joint_meanfield_energy(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    store: &RatingStore,
    u: u32,
    j: u32,
    level: u8,
) -> Result<f64> {
    joint.validate_for(store)?;
    if !scheme.scale().contains_level(level) {
        return Err(Error::RatingRange {
            line: 0,
            value: level.to_string(),
            n_levels: scheme.n_levels(),
        });
    }
    let tables = scheme.tables();
    let (user_row, item_row, user_post, item_post) =
        prediction_context(joint, &tables, store, u, j)?;
    let energies = joint_level_energies(
        joint, &tables, &user_row, &item_row, u, j, &user_post, &item_post,
    );
    Ok(energies[(level - 1) as usize])
}

// -------------------------------------------------------------------------
// alternating training
// -------------------------------------------------------------------------

/// Per-level external bias every rating node receives from the opposite,
/// clamped side: its unary row, its posterior-weighted interaction row and
/// its pair weights against observed co-raters.
fn build_externals_levels(
    other_side: &BmParams,
    tables: &LevelTables,
    rows: &[Vec<(u32, u8)>],
    cross_rows: &[Vec<(u32, u8)>],
    posts: &[Vec<f64>],
) -> Vec<ExternalRow> {
    let n = tables.n_levels();
    let a = other_side.a();
    let d_other = other_side.d();
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let r = r as u32;
        // unary part, shared by every node of this row
        let mut base = vec![0.0; n];
        let bias = other_side.input_bias_row(r);
        for (s_idx, b) in base.iter_mut().enumerate() {
            let f = tables.unary_at((s_idx + 1) as u8);
            for idx in 0..a {
                *b += bias[idx] * f[idx];
            }
        }
        // interaction dot products per (level, other-side hidden unit)
        let mut inter = vec![0.0; n * d_other];
        for s_idx in 0..n {
            let f = tables.unary_at((s_idx + 1) as u8);
            for k in 0..d_other {
                let w = other_side.interaction_row(r, k);
                let mut dot = 0.0;
                for idx in 0..a {
                    dot += w[idx] * f[idx];
                }
                inter[s_idx * d_other + k] = dot;
            }
        }
        let mut ext_row: ExternalRow = Vec::with_capacity(row.len());
        for &(node, _) in row {
            let mut v = base.clone();
            let post = &posts[node as usize];
            for s_idx in 0..n {
                let mut acc = 0.0;
                for (k, &p) in post.iter().enumerate() {
                    acc += p * inter[s_idx * d_other + k];
                }
                v[s_idx] += acc;
            }
            // pair weights of the opposite side against co-raters of `node`
            for &(other_entity, slot) in other_side.pairs.adjacent(r) {
                let cross = &cross_rows[node as usize];
                if let Ok(pos) = cross.binary_search_by_key(&other_entity, |&(e, _)| e) {
                    let t = cross[pos].1;
                    let mut w = 0.0;
                    for b in 0..other_side.pairs.b() {
                        w += other_side.pairs.value(slot as usize, b);
                    }
                    for (s_idx, vv) in v.iter_mut().enumerate() {
                        *vv += w * tables.pair_at((s_idx + 1) as u8, t);
                    }
                }
            }
            ext_row.push(v);
        }
        out.push(ext_row);
    }
    out
}

/// Gaussian analogue: a scalar mean offset per rating node.
fn build_externals_means(
    other_side: &BmParams,
    scheme: &FeatureScheme,
    rows: &[Vec<(u32, u8)>],
    cross_rows: &[Vec<(u32, u8)>],
    posts: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let norm = scheme
        .normalizer()
        .expect("gaussian scheme carries a normalizer");
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let r = r as u32;
        let bias = other_side.input_bias_row(r)[0];
        let mut means = Vec::with_capacity(row.len());
        for &(node, _) in row {
            let mut e = bias;
            let post = &posts[node as usize];
            for (k, &p) in post.iter().enumerate() {
                e += p * other_side.interaction_row(r, k)[0];
            }
            for &(other_entity, slot) in other_side.pairs.adjacent(r) {
                let cross = &cross_rows[node as usize];
                if let Ok(pos) = cross.binary_search_by_key(&other_entity, |&(en, _)| en) {
                    e += other_side.pairs.value(slot as usize, 0)
                        * norm.transform(cross[pos].1);
                }
            }
            means.push(e);
        }
        out.push(means);
    }
    out
}

fn all_posteriors(
    params: &BmParams,
    tables: &LevelTables,
    rows: &[Vec<(u32, u8)>],
) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|row| Ok(hidden_posterior_tables(params, tables, row)?.probs))
        .collect()
}

fn joint_validation_mae(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    train: &RatingStore,
    held_out: &RatingStore,
) -> f64 {
    let mut err = 0.0;
    let mut count = 0usize;
    for u in 0..held_out.n_users() {
        for &(item, level) in held_out.user_ratings(u as u32) {
            if let Ok(pred) = inference::predict_joint(joint, scheme, train, u as u32, item) {
                err += (pred.expected_value - level as f64).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        err / count as f64
    }
}

/// Alternating structured training: clamp item-side posteriors and update
/// the user side for `epochs_per_phase` epochs, then clamp user-side
/// posteriors and update the item side; repeat for `alternations` rounds
/// with an optional validation-MAE early exit.
pub fn alternating_train(
    cfg: &JointTrainConfig,
    store: &RatingStore,
    scheme: &FeatureScheme,
    item_graph: Option<&NeighborGraph>,
    user_graph: Option<&NeighborGraph>,
    val: Option<&RatingStore>,
) -> Result<(JointModelParams, Vec<EpochStats>)> {
    cfg.base.validate()?;
    if cfg.base.method == TrainMethod::GaussianPl && scheme.kind() != SchemeKind::Gaussian {
        return Err(Error::InvalidArgument(
            "gaussian_pl training requires the gaussian scheme".into(),
        ));
    }
    if let Some(g) = item_graph {
        if g.axis != Axis::Item || g.n_entities() != store.n_items() {
            return Err(Error::InvalidArgument(
                "item correlation graph must be item-axis over the store's items".into(),
            ));
        }
    }
    if let Some(g) = user_graph {
        if g.axis != Axis::User || g.n_entities() != store.n_users() {
            return Err(Error::InvalidArgument(
                "user correlation graph must be user-axis over the store's users".into(),
            ));
        }
    }
    let tables = scheme.tables();
    let b = scheme.pair_len();
    let user_pairs = match item_graph {
        Some(g) => PairWeights::from_graph(g, b),
        None => PairWeights::empty(store.n_items(), b),
    };
    let item_pairs = match user_graph {
        Some(g) => PairWeights::from_graph(g, b),
        None => PairWeights::empty(store.n_users(), b),
    };

    let mut rng_user = ChaCha8Rng::seed_from_u64(cfg.base.seed);
    let mut rng_item = ChaCha8Rng::seed_from_u64(cfg.base.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut user_side = BmParams::init_random(
        store.n_items(),
        cfg.base.hidden,
        scheme.unary_len(),
        user_pairs,
        cfg.base.init_sigma,
        &mut rng_user,
    );
    let mut item_side = if cfg.freeze_item {
        BmParams::zeros(store.n_users(), cfg.d_item, scheme.unary_len(), item_pairs)
    } else {
        BmParams::init_random(
            store.n_users(),
            cfg.d_item,
            scheme.unary_len(),
            item_pairs,
            cfg.base.init_sigma,
            &mut rng_item,
        )
    };

    let user_rows = store.rows(Axis::User);
    let item_rows = store.rows(Axis::Item);
    let mut acc_user = GradientAccumulator::new_like(&user_side);
    let mut acc_item = GradientAccumulator::new_like(&item_side);
    let mut stats = Vec::new();
    let mut patience = Patience::new(if val.is_some() { cfg.base.patience } else { 0 });
    let mut epoch = 0usize;
    let gaussian = cfg.base.method == TrainMethod::GaussianPl;

    'outer: for _alt in 0..cfg.alternations {
        // user phase: item-side posteriors clamped
        let (ext_levels, ext_means);
        let user_ext = if cfg.freeze_item {
            PhaseExternals::None
        } else {
            let q_items = all_posteriors(&item_side, &tables, item_rows)?;
            if gaussian {
                ext_means =
                    build_externals_means(&item_side, scheme, user_rows, item_rows, &q_items);
                PhaseExternals::Means(&ext_means)
            } else {
                ext_levels = build_externals_levels(
                    &item_side, &tables, user_rows, item_rows, &q_items,
                );
                PhaseExternals::Levels(&ext_levels)
            }
        };
        for _ in 0..cfg.epochs_per_phase {
            epoch += 1;
            let t0 = Instant::now();
            run_one_epoch(
                &mut user_side,
                user_rows,
                &user_ext,
                &cfg.base,
                scheme,
                &tables,
                &mut acc_user,
                &mut rng_user,
            )?;
            if !user_side.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            stats.push(EpochStats {
                epoch,
                objective_estimate: probe_objective(
                    &user_side,
                    scheme,
                    &tables,
                    user_rows,
                    cfg.base.method,
                ),
                val_mae: f64::NAN,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }

        // item phase: user-side posteriors clamped
        if !cfg.freeze_item {
            let q_users = all_posteriors(&user_side, &tables, user_rows)?;
            let (ext_levels_i, ext_means_i);
            let item_ext = if gaussian {
                ext_means_i =
                    build_externals_means(&user_side, scheme, item_rows, user_rows, &q_users);
                PhaseExternals::Means(&ext_means_i)
            } else {
                ext_levels_i = build_externals_levels(
                    &user_side, &tables, item_rows, user_rows, &q_users,
                );
                PhaseExternals::Levels(&ext_levels_i)
            };
            let item_cfg = TrainConfig {
                hidden: cfg.d_item,
                ..cfg.base.clone()
            };
            for _ in 0..cfg.epochs_per_phase {
                epoch += 1;
                let t0 = Instant::now();
                run_one_epoch(
                    &mut item_side,
                    item_rows,
                    &item_ext,
                    &item_cfg,
                    scheme,
                    &tables,
                    &mut acc_item,
                    &mut rng_item,
                )?;
                if !item_side.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                stats.push(EpochStats {
                    epoch,
                    objective_estimate: probe_objective(
                        &item_side,
                        scheme,
                        &tables,
                        item_rows,
                        cfg.base.method,
                    ),
                    val_mae: f64::NAN,
                    seconds: t0.elapsed().as_secs_f64(),
                });
            }
        }

        // validation at the end of each alternation
        if let Some(v) = val {
            let joint = JointModelParams {
                user_side: user_side.clone(),
                item_side: item_side.clone(),
            };
            let val_mae = joint_validation_mae(&joint, scheme, store, v);
            if let Some(last) = stats.last_mut() {
                last.val_mae = val_mae;
            }
            if patience.update(val_mae) {
                break 'outer;
            }
        }
    }
    Ok((
        JointModelParams {
            user_side,
            item_side,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RatingScale, RatingStore, RatingTriple};
    use crate::learning::sgd_train;

    fn ord5() -> FeatureScheme {
        FeatureScheme::ordinal(RatingScale::five_star())
    }

    fn toy_store() -> RatingStore {
        let mut triples = Vec::new();
        let mut x = 42u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 33) as u32
        };
        for u in 0..12u32 {
            for i in 0..6u32 {
                if next() % 3 != 0 {
                    triples.push(RatingTriple {
                        user: u,
                        item: i,
                        level: (next() % 5 + 1) as u8,
                    });
                }
            }
        }
        RatingStore::from_triples(
            RatingScale::five_star(),
            (0..12).map(|u| u.to_string()).collect(),
            (0..6).map(|i| i.to_string()).collect(),
            &triples,
        )
        .unwrap()
    }

    #[test]
    fn joint_energy_zero_params_is_zero() {
        let store = toy_store();
        let scheme = ord5();
        let joint = JointModelParams {
            user_side: BmParams::zeros(
                store.n_items(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_items(), 1),
            ),
            item_side: BmParams::zeros(
                store.n_users(),
                3,
                scheme.unary_len(),
                PairWeights::empty(store.n_users(), 1),
            ),
        };
        let uh = vec![vec![true, false]; store.n_users()];
        let ih = vec![vec![false, true, true]; store.n_items()];
        let e = joint_negative_energy(&joint, &scheme, &store, &uh, &ih).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn joint_energy_decomposes_when_item_side_zero() {
        let store = toy_store();
        let scheme = ord5();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let user_side = BmParams::init_random(
            store.n_items(),
            2,
            scheme.unary_len(),
            PairWeights::empty(store.n_items(), 1),
            0.5,
            &mut rng,
        );
        let joint = JointModelParams {
            user_side: user_side.clone(),
            item_side: BmParams::zeros(
                store.n_users(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_users(), 1),
            ),
        };
        let uh: Vec<Vec<bool>> = (0..store.n_users())
            .map(|u| vec![u % 2 == 0, u % 3 == 0])
            .collect();
        let ih = vec![vec![true, true]; store.n_items()];
        let joint_e = joint_negative_energy(&joint, &scheme, &store, &uh, &ih).unwrap();
        let mut sum = 0.0;
        for u in 0..store.n_users() {
            sum += negative_energy(&user_side, &scheme, store.user_ratings(u as u32), &uh[u])
                .unwrap();
        }
        assert!((joint_e - sum).abs() < 1e-12);
    }

    #[test]
    fn frozen_item_side_reduces_to_user_training_bitwise() {
        let store = toy_store();
        let scheme = ord5();
        let base = TrainConfig {
            hidden: 3,
            max_epochs: 6,
            seed: 77,
            block_size: 5,
            ..TrainConfig::default()
        };
        let (user_only, _) = sgd_train(&base, &store, &scheme, None, None).unwrap();
        let cfg = JointTrainConfig {
            base: TrainConfig {
                max_epochs: 0, // unused by alternating
                ..base
            },
            d_item: 2,
            alternations: 3,
            epochs_per_phase: 2,
            freeze_item: true,
        };
        let (joint, _) = alternating_train(&cfg, &store, &scheme, None, None, None).unwrap();
        assert_eq!(joint.user_side, user_only);
        assert!(joint.item_side.hidden_bias.iter().all(|&v| v == 0.0));
        assert!(joint.item_side.input_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alternating_is_deterministic() {
        let store = toy_store();
        let scheme = ord5();
        let cfg = JointTrainConfig {
            base: TrainConfig {
                hidden: 2,
                seed: 13,
                block_size: 4,
                ..TrainConfig::default()
            },
            d_item: 2,
            alternations: 2,
            epochs_per_phase: 1,
            freeze_item: false,
        };
        let (a, _) = alternating_train(&cfg, &store, &scheme, None, None, None).unwrap();
        let (b, _) = alternating_train(&cfg, &store, &scheme, None, None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn meanfield_energy_zero_params_level_independent() {
        let store = toy_store();
        let scheme = ord5();
        let joint = JointModelParams {
            user_side: BmParams::zeros(
                store.n_items(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_items(), 1),
            ),
            item_side: BmParams::zeros(
                store.n_users(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_users(), 1),
            ),
        };
        // find an unrated (u, j) pair
        let (mut uu, mut jj) = (0u32, 0u32);
        'search: for u in 0..store.n_users() as u32 {
            for j in 0..store.n_items() as u32 {
                if store.get(u, j).is_none() {
                    uu = u;
                    jj = j;
                    break 'search;
                }
            }
        }
        let e1 = joint_meanfield_energy(&joint, &scheme, &store, uu, jj, 1).unwrap();
        for s in 2..=5u8 {
            let es = joint_meanfield_energy(&joint, &scheme, &store, uu, jj, s).unwrap();
            assert!((es - e1).abs() < 1e-15);
        }
    }

    #[test]
    fn meanfield_energy_cold_start() {
        let store = toy_store();
        let scheme = ord5();
        let joint = JointModelParams {
            user_side: BmParams::zeros(
                store.n_items(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_items(), 1),
            ),
            item_side: BmParams::zeros(
                store.n_users(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_users(), 1),
            ),
        };
        assert!(matches!(
            joint_meanfield_energy(&joint, &scheme, &store, 999, 0, 3),
            Err(Error::ColdStart(_))
        ));
    }

    #[test]
    fn pair_term_is_affine_in_pair_weights() {
        let store = toy_store();
        let scheme = ord5();
        let graph = crate::neighbors::build_topk(&store, Axis::Item, 3, 2);
        let pairs = PairWeights::from_graph(&graph, 1);
        let mut user_side =
            BmParams::zeros(store.n_items(), 2, scheme.unary_len(), pairs);
        for v in user_side.pairs.values_mut() {
            *v = 0.25;
        }
        let joint = |us: BmParams| JointModelParams {
            user_side: us,
            item_side: BmParams::zeros(
                store.n_users(),
                2,
                scheme.unary_len(),
                PairWeights::empty(store.n_users(), 1),
            ),
        };
        let (mut uu, mut jj) = (0u32, 0u32);
        'search: for u in 0..store.n_users() as u32 {
            for j in 0..store.n_items() as u32 {
                if store.get(u, j).is_none() && !user_side.pairs.adjacent(j).is_empty() {
                    uu = u;
                    jj = j;
                    break 'search;
                }
            }
        }
        let single = joint(user_side.clone());
        let e1 = joint_meanfield_energy(&single, &scheme, &store, uu, jj, 5).unwrap();
        let mut doubled = user_side.clone();
        for v in doubled.pairs.values_mut() {
            *v *= 2.0;
        }
        let double = joint(doubled);
        let e2 = joint_meanfield_energy(&double, &scheme, &store, uu, jj, 5).unwrap();
        // with only pair weights nonzero the energy doubles exactly
        assert!((e2 - 2.0 * e1).abs() < 1e-12);
    }
}
