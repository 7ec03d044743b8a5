//! Shared test support: an independent brute-force oracle over tiny
//! models, random model generators, and a synthetic rating corpus with
//! MovieLens-like marginals for the desk-scale pipeline suites.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ordrec_core::corpus::{Axis, RatingScale, RatingStore, RatingTriple};
use ordrec_core::joint_bm::JointModelParams;
use ordrec_core::features::FeatureScheme;
use ordrec_core::math::normal_sample;
use ordrec_core::user_bm::{BmParams, PairWeights};

// -------------------------------------------------------------------------
// brute-force oracle
// -------------------------------------------------------------------------

/// One fully enumerated model state.
pub struct State {
    pub levels: Vec<u8>,
    pub hidden: Vec<bool>,
    pub weight: f64,
}

/// Unnormalized weight of a full configuration, computed straight from the
/// potential products (bias, input, interaction and pair potentials) with
/// no factorization tricks.
pub fn state_weight(
    p: &BmParams,
    scheme: &FeatureScheme,
    items: &[u32],
    levels: &[u8],
    hidden: &[bool],
) -> f64 {
    let mut log_w = 0.0;
    for (k, &h) in hidden.iter().enumerate() {
        if h {
            log_w += p.hidden_bias[k];
        }
    }
    for (pos, &i) in items.iter().enumerate() {
        let f = scheme.unary(levels[pos]).unwrap();
        let beta = p.input_bias_row(i);
        for a in 0..p.a() {
            log_w += beta[a] * f[a];
        }
        for (k, &h) in hidden.iter().enumerate() {
            if h {
                let gam = p.interaction_row(i, k);
                for a in 0..p.a() {
                    log_w += gam[a] * f[a];
                }
            }
        }
    }
    for x in 0..items.len() {
        for y in (x + 1)..items.len() {
            if let Some(slot) = p.pairs.slot(items[x], items[y]) {
                let fb = scheme.pair(levels[x], levels[y]).unwrap();
                for b in 0..p.pairs.b() {
                    log_w += p.pairs.value(slot, b) * fb[b];
                }
            }
        }
    }
    log_w.exp()
}

/// Every (levels, hidden) configuration of the model restricted to `items`,
/// with its unnormalized weight.
pub fn enumerate_states(p: &BmParams, scheme: &FeatureScheme, items: &[u32]) -> Vec<State> {
    let n = scheme.n_levels() as u8;
    let d = p.d();
    let mut out = Vec::new();
    let mut levels = vec![1u8; items.len()];
    loop {
        for mask in 0..(1usize << d) {
            let hidden: Vec<bool> = (0..d).map(|k| mask & (1 << k) != 0).collect();
            let weight = state_weight(p, scheme, items, &levels, &hidden);
            out.push(State {
                levels: levels.clone(),
                hidden,
                weight,
            });
        }
        if !advance(&mut levels, n) {
            break;
        }
    }
    out
}

pub fn advance(config: &mut [u8], n: u8) -> bool {
    for c in config.iter_mut() {
        if *c < n {
            *c += 1;
            return true;
        }
        *c = 1;
    }
    false
}

pub fn partition(states: &[State]) -> f64 {
    states.iter().map(|s| s.weight).sum()
}

/// P(h_k = 1 | levels) by clamped enumeration.
pub fn oracle_hidden_posterior(
    p: &BmParams,
    scheme: &FeatureScheme,
    items: &[u32],
    levels: &[u8],
) -> Vec<f64> {
    let d = p.d();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for mask in 0..(1usize << d) {
        let hidden: Vec<bool> = (0..d).map(|k| mask & (1 << k) != 0).collect();
        let w = state_weight(p, scheme, items, levels, &hidden);
        den += w;
        for (k, &h) in hidden.iter().enumerate() {
            if h {
                num[k] += w;
            }
        }
    }
    num.into_iter().map(|v| v / den).collect()
}

/// P(levels claimed jointly) = Σ_h w / Z, as a log.
pub fn oracle_log_likelihood(
    p: &BmParams,
    scheme: &FeatureScheme,
    items: &[u32],
    levels: &[u8],
    states: &[State],
) -> f64 {
    let d = p.d();
    let mut mass = 0.0;
    for mask in 0..(1usize << d) {
        let hidden: Vec<bool> = (0..d).map(|k| mask & (1 << k) != 0).collect();
        mass += state_weight(p, scheme, items, levels, &hidden);
    }
    mass.ln() - partition(states).ln()
}

/// P(r at `pos` = s | other levels clamped), marginalizing hidden units.
pub fn oracle_level_conditional(
    p: &BmParams,
    scheme: &FeatureScheme,
    items: &[u32],
    levels: &[u8],
    pos: usize,
) -> Vec<f64> {
    let n = scheme.n_levels();
    let d = p.d();
    let mut masses = vec![0.0; n];
    let mut work = levels.to_vec();
    for s in 1..=n as u8 {
        work[pos] = s;
        for mask in 0..(1usize << d) {
            let hidden: Vec<bool> = (0..d).map(|k| mask & (1 << k) != 0).collect();
            masses[(s - 1) as usize] += state_weight(p, scheme, items, &work, &hidden);
        }
    }
    let z: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / z).collect()
}

/// Marginal P(r at `pos` = s) over the full joint.
pub fn oracle_level_marginal(states: &[State], pos: usize, n: usize) -> Vec<f64> {
    let z = partition(states);
    let mut out = vec![0.0; n];
    for s in states {
        out[(s.levels[pos] - 1) as usize] += s.weight;
    }
    out.into_iter().map(|m| m / z).collect()
}

// -------------------------------------------------------------------------
// random tiny models
// -------------------------------------------------------------------------

/// Random parameters over `n_entities` input nodes with all four blocks
/// drawn from N(0, sigma²) and each unordered pair present with
/// probability `pair_prob`.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    scheme: &FeatureScheme,
    n_entities: usize,
    d: usize,
    pair_prob: f64,
    sigma: f64,
) -> BmParams {
    let mut pairs = Vec::new();
    for i in 0..n_entities as u32 {
        for j in (i + 1)..n_entities as u32 {
            if rng.gen::<f64>() < pair_prob {
                pairs.push((i, j));
            }
        }
    }
    let pw = PairWeights::from_pairs(n_entities, pairs, scheme.pair_len()).unwrap();
    let mut p = BmParams::zeros(n_entities, d, scheme.unary_len(), pw);
    for v in p.hidden_bias.iter_mut() {
        *v = normal_sample(rng, sigma);
    }
    for v in p.input_bias.iter_mut() {
        *v = normal_sample(rng, sigma);
    }
    for v in p.interaction.iter_mut() {
        *v = normal_sample(rng, sigma);
    }
    for v in p.pairs.values_mut() {
        *v = normal_sample(rng, sigma);
    }
    p
}

/// A sorted row of `count` distinct rated entities with random levels.
pub fn random_row(
    rng: &mut ChaCha8Rng,
    n_entities: usize,
    count: usize,
    n_levels: usize,
) -> Vec<(u32, u8)> {
    let mut ids: Vec<u32> = (0..n_entities as u32).collect();
    ids.shuffle(rng);
    let mut row: Vec<(u32, u8)> = ids[..count]
        .iter()
        .map(|&i| (i, rng.gen_range(1..=n_levels as u8)))
        .collect();
    row.sort_unstable_by_key(|&(i, _)| i);
    row
}

/// Addressable view of every scalar parameter, for finite differences.
pub enum Slot {
    Hidden(usize),
    Input(usize),
    Inter(usize),
    Pair(usize),
}

pub fn all_slots(p: &BmParams) -> Vec<Slot> {
    let mut out = Vec::new();
    for k in 0..p.hidden_bias.len() {
        out.push(Slot::Hidden(k));
    }
    for i in 0..p.input_bias.len() {
        out.push(Slot::Input(i));
    }
    for i in 0..p.interaction.len() {
        out.push(Slot::Inter(i));
    }
    for i in 0..p.pairs.values().len() {
        out.push(Slot::Pair(i));
    }
    out
}

pub fn nudge(p: &mut BmParams, slot: &Slot, delta: f64) {
    match *slot {
        Slot::Hidden(k) => p.hidden_bias[k] += delta,
        Slot::Input(i) => p.input_bias[i] += delta,
        Slot::Inter(i) => p.interaction[i] += delta,
        Slot::Pair(i) => p.pairs.values_mut()[i] += delta,
    }
}

pub fn grad_component(
    g: &ordrec_core::learning::GradientAccumulator,
    slot: &Slot,
) -> f64 {
    match *slot {
        Slot::Hidden(k) => g.hidden_bias[k],
        Slot::Input(i) => g.input_bias[i],
        Slot::Inter(i) => g.interaction[i],
        Slot::Pair(i) => g.pair[i],
    }
}

/// Relative agreement used by the gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// -------------------------------------------------------------------------
// synthetic corpus with MovieLens-like marginals
// -------------------------------------------------------------------------

/// Deterministic synthetic rating corpus: latent user/item factors drive
/// both which items a user rates (popularity × preference exposure) and
/// the ordinal level assigned, so similarity structure, co-occurrence
/// structure and a skewed popularity curve are all present.
pub fn synth_corpus(
    n_users: usize,
    n_items: usize,
    target_ratings: usize,
    seed: u64,
) -> RatingStore {
    synth_corpus_tilted(n_users, n_items, target_ratings, seed, 0.8)
}

/// Generator with a configurable preference-exposure tilt (how strongly a
/// user's predisposition toward an item raises the chance they rate it).
pub fn synth_corpus_tilted(
    n_users: usize,
    n_items: usize,
    target_ratings: usize,
    seed: u64,
    tilt: f64,
) -> RatingStore {
    let dim = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_vecs: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..dim).map(|_| normal_sample(&mut rng, 0.8)).collect())
        .collect();
    let item_vecs: Vec<Vec<f64>> = (0..n_items)
        .map(|_| (0..dim).map(|_| normal_sample(&mut rng, 0.8)).collect())
        .collect();
    let user_bias: Vec<f64> = (0..n_users).map(|_| normal_sample(&mut rng, 0.35)).collect();
    let item_bias: Vec<f64> = (0..n_items).map(|_| normal_sample(&mut rng, 0.45)).collect();

    // popularity: a permuted power-law curve
    let mut pop_rank: Vec<usize> = (0..n_items).collect();
    pop_rank.shuffle(&mut rng);
    let log_pop: Vec<f64> = (0..n_items)
        .map(|i| -0.9 * ((pop_rank[i] + 5) as f64).ln())
        .collect();

    let base = target_ratings as f64 / n_users as f64;
    let mut triples = Vec::with_capacity(target_ratings + target_ratings / 4);
    for u in 0..n_users {
        let count = (base * (normal_sample(&mut rng, 0.5)).exp())
            .round()
            .clamp(25.0, (n_items as f64) * 0.6) as usize;
        // Gumbel top-k draw without replacement, tilted toward items the
        // user is predisposed to like
        let mut keyed: Vec<(f64, u32)> = (0..n_items)
            .map(|i| {
                let affinity: f64 = user_bias[u]
                    + item_bias[i]
                    + user_vecs[u]
                        .iter()
                        .zip(&item_vecs[i])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                let gumbel = -(-(rng.gen_range(f64::MIN_POSITIVE..1.0)).ln()).ln();
                (
                    log_pop[i] + tilt * affinity.clamp(-2.5, 2.5) + gumbel,
                    i as u32,
                )
            })
            .collect();
        keyed.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for &(_, i) in keyed.iter().take(count) {
            let raw = 3.5
                + user_bias[u]
                + item_bias[i as usize]
                + user_vecs[u]
                    .iter()
                    .zip(&item_vecs[i as usize])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                + normal_sample(&mut rng, 0.55);
            let level = raw.round().clamp(1.0, 5.0) as u8;
            triples.push(RatingTriple {
                user: u as u32,
                item: i,
                level,
            });
        }
    }
    RatingStore::from_triples(
        RatingScale::five_star(),
        (1..=n_users).map(|u| u.to_string()).collect(),
        (1..=n_items).map(|i| i.to_string()).collect(),
        &triples,
    )
    .unwrap()
}

/// Load MovieLens-100K from `ML100K_DIR` (or ./data/ml-100k) when present.
pub fn try_load_ml100k() -> Option<RatingStore> {
    let candidates = [
        std::env::var("ML100K_DIR").ok().map(std::path::PathBuf::from),
        Some(std::path::PathBuf::from("data/ml-100k")),
        Some(std::path::PathBuf::from("../../data/ml-100k")),
    ];
    for dir in candidates.into_iter().flatten() {
        let file = dir.join("u.data");
        if file.exists() {
            let reader = std::io::BufReader::new(std::fs::File::open(file).ok()?);
            return ordrec_core::corpus::parse_ratings(
                reader,
                ordrec_core::corpus::RatingFormat::Ml100kTab,
                &RatingScale::five_star(),
            )
            .ok();
        }
    }
    None
}

/// The evaluation corpus: real MovieLens-100K when the dataset is present,
/// otherwise the synthetic stand-in at the same scale. The bool is true
/// for the real dataset.
pub fn evaluation_corpus() -> (RatingStore, bool) {
    match try_load_ml100k() {
        Some(store) => (store, true),
        None => (synth_corpus(943, 1400, 100_000, 20_261_025), false),
    }
}

/// Per-user rated-item sets of a store, as hash sets.
pub fn per_user_item_sets(store: &RatingStore) -> Vec<HashSet<u32>> {
    (0..store.n_users())
        .map(|u| {
            store
                .user_ratings(u as u32)
                .iter()
                .map(|&(i, _)| i)
                .collect()
        })
        .collect()
}

/// Exact structured pseudo-likelihood probe: ½(Σ_u log P(row_u | rest) +
/// Σ_i log P(col_i | rest)), each row conditional computed by enumerating
/// the row's level configurations with the opposite side's hidden units
/// summed out exactly. Tiny stores only.
pub fn structured_pl_probe(
    joint: &JointModelParams,
    scheme: &FeatureScheme,
    store: &RatingStore,
) -> f64 {
    let half = |side_rows: Axis| -> f64 {
        let (own, other) = match side_rows {
            Axis::User => (&joint.user_side, &joint.item_side),
            Axis::Item => (&joint.item_side, &joint.user_side),
        };
        let rows = store.rows(side_rows);
        let cross = store.rows(match side_rows {
            Axis::User => Axis::Item,
            Axis::Item => Axis::User,
        });
        let n = scheme.n_levels() as u8;
        let mut total = 0.0;
        for (r, row) in rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let observed: Vec<u8> = row.iter().map(|&(_, s)| s).collect();
            let nodes: Vec<u32> = row.iter().map(|&(i, _)| i).collect();
            let mut config = vec![1u8; row.len()];
            let mut log_masses = Vec::new();
            let mut observed_mass = 0.0;
            loop {
                let mut log_m = 0.0;
                // own-side row terms with own hidden units summed out
                let assoc: Vec<(u32, u8)> = nodes
                    .iter()
                    .zip(&config)
                    .map(|(&i, &s)| (i, s))
                    .collect();
                let mut mass = 0.0;
                for mask in 0..(1usize << own.d()) {
                    let hidden: Vec<bool> =
                        (0..own.d()).map(|k| mask & (1 << k) != 0).collect();
                    mass += state_weight(own, scheme, &nodes, &config, &hidden);
                    let _ = &assoc;
                }
                log_m += mass.ln();
                // other-side contributions: for each node, that entity's
                // column with this row's candidate level substituted
                for (pos, &node) in nodes.iter().enumerate() {
                    let col: Vec<(u32, u8)> = cross[node as usize]
                        .iter()
                        .map(|&(e, s)| if e == r as u32 { (e, config[pos]) } else { (e, s) })
                        .collect();
                    let ids: Vec<u32> = col.iter().map(|&(e, _)| e).collect();
                    let lv: Vec<u8> = col.iter().map(|&(_, s)| s).collect();
                    let mut cmass = 0.0;
                    for mask in 0..(1usize << other.d()) {
                        let hidden: Vec<bool> =
                            (0..other.d()).map(|k| mask & (1 << k) != 0).collect();
                        cmass += state_weight(other, scheme, &ids, &lv, &hidden);
                    }
                    log_m += cmass.ln();
                }
                if config == observed {
                    observed_mass = log_m;
                }
                log_masses.push(log_m);
                if !advance(&mut config, n) {
                    break;
                }
            }
            let max = log_masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + log_masses
                    .iter()
                    .map(|&v| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            total += observed_mass - lse;
        }
        total
    };
    0.5 * (half(Axis::User) + half(Axis::Item))
}
