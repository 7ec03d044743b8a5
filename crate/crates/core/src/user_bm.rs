//! The per-entity Boltzmann machine: a binary hidden layer over one row of
//! ratings, with biases on hidden units, per-(entity, feature) input biases,
//! hidden–input weights and pairwise correlation weights on neighbour pairs.
//!
//! The same parameter shape serves the user-centric model (rows = users,
//! input entities = items) and, with axes transposed, the item-centric side
//! of the joint model (rows = items, input entities = users).

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureScheme, LevelTables};
use crate::math::{normal_sample, sigmoid, softmax_in_place};
use crate::neighbors::NeighborGraph;

/// Pairwise correlation weights over a frozen set of unordered entity
/// pairs. Each pair carries `b` weights and is stored exactly once; the
/// per-entity adjacency lists index into the flat value array.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    b: usize,
    pairs: Vec<(u32, u32)>,
    values: Vec<f64>,
    adj: Vec<Vec<(u32, u32)>>, // entity -> sorted [(other, slot)]
}

impl PairWeights {
    pub fn empty(n_entities: usize, b: usize) -> Self {
        Self {
            b,
            pairs: Vec::new(),
            values: Vec::new(),
            adj: vec![Vec::new(); n_entities],
        }
    }

    /// Zero-initialized weights over canonical (low, high) pairs.
    pub fn from_pairs(n_entities: usize, pairs: Vec<(u32, u32)>, b: usize) -> Result<Self> {
        let mut adj: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_entities];
        for (slot, &(lo, hi)) in pairs.iter().enumerate() {
            if lo >= hi || (hi as usize) >= n_entities {
                return Err(Error::Index(format!("bad pair ({lo}, {hi})")));
            }
            adj[lo as usize].push((hi, slot as u32));
            adj[hi as usize].push((lo, slot as u32));
        }
        for list in adj.iter_mut() {
            list.sort_unstable_by_key(|&(other, _)| other);
        }
        let values = vec![0.0; pairs.len() * b];
        Ok(Self {
            b,
            pairs,
            values,
            adj,
        })
    }

    pub fn from_graph(graph: &NeighborGraph, b: usize) -> Self {
        Self::from_pairs(graph.n_entities(), graph.undirected_pairs(), b)
            .expect("graph pairs are canonical")
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Neighbours of `entity` with the flat slot of each pair.
    #[inline]
    pub fn adjacent(&self, entity: u32) -> &[(u32, u32)] {
        &self.adj[entity as usize]
    }

    pub fn slot(&self, i: u32, j: u32) -> Option<usize> {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        self.adj[lo as usize]
            .binary_search_by_key(&hi, |&(other, _)| other)
            .ok()
            .map(|pos| self.adj[lo as usize][pos].1 as usize)
    }

    #[inline]
    pub fn value(&self, slot: usize, b_idx: usize) -> f64 {
        self.values[slot * self.b + b_idx]
    }
}

/// Parameters of one side of the model. `n_entities` counts the input
/// nodes a row can touch (items for the user side, users for the item
/// side); `d` is the hidden layer width and `a` the unary feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct BmParams {
    n_entities: usize,
    d: usize,
    a: usize,
    /// Per-hidden-unit bias, length d.
    pub hidden_bias: Vec<f64>,
    /// Per-(entity, feature) input bias, n_entities × a row-major.
    pub input_bias: Vec<f64>,
    /// Hidden–input weights, n_entities × d × a row-major.
    pub interaction: Vec<f64>,
    /// Correlation weights on neighbour pairs.
    pub pairs: PairWeights,
}

impl BmParams {
    pub fn zeros(n_entities: usize, d: usize, a: usize, pairs: PairWeights) -> Self {
        Self {
            n_entities,
            d,
            a,
            hidden_bias: vec![0.0; d],
            input_bias: vec![0.0; n_entities * a],
            interaction: vec![0.0; n_entities * d * a],
            pairs,
        }
    }

    /// Hidden-associated parameters drawn from N(0, sigma²); input biases
    /// and pair weights start at zero.
    pub fn init_random(
        n_entities: usize,
        d: usize,
        a: usize,
        pairs: PairWeights,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(n_entities, d, a, pairs);
        if sigma > 0.0 {
            for v in p.hidden_bias.iter_mut() {
                *v = normal_sample(rng, sigma);
            }
            for v in p.interaction.iter_mut() {
                *v = normal_sample(rng, sigma);
            }
        }
        p
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> usize {
        self.a
    }

    #[inline]
    pub fn input_bias_row(&self, entity: u32) -> &[f64] {
        let base = entity as usize * self.a;
        &self.input_bias[base..base + self.a]
    }

    #[inline]
    pub fn interaction_row(&self, entity: u32, k: usize) -> &[f64] {
        let base = (entity as usize * self.d + k) * self.a;
        &self.interaction[base..base + self.a]
    }

    pub fn is_finite(&self) -> bool {
        self.hidden_bias.iter().all(|v| v.is_finite())
            && self.input_bias.iter().all(|v| v.is_finite())
            && self.interaction.iter().all(|v| v.is_finite())
            && self.pairs.values.iter().all(|v| v.is_finite())
    }

    fn check_entity(&self, entity: u32) -> Result<()> {
        if (entity as usize) < self.n_entities {
            Ok(())
        } else {
            Err(Error::Index(format!(
                "entity {entity} outside parameter range {}",
                self.n_entities
            )))
        }
    }
}

/// Per-unit probabilities P(h_k = 1 | row).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenPosterior {
    pub probs: Vec<f64>,
}

/// Additive per-node, per-level energy terms contributed by something
/// outside this side of the model (the clamped opposite side during joint
/// training). Aligned with the row's rating slice.
pub type ExternalRow = Vec<Vec<f64>>;

/// Negative energy of one row at a full configuration (hidden bits plus the
/// row's ratings). Each unordered neighbour pair contributes exactly once.
pub fn negative_energy(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
    hidden: &[bool],
) -> Result<f64> {
    if hidden.len() != params.d() {
        return Err(Error::Shape(format!(
            "hidden length {} != d {}",
            hidden.len(),
            params.d()
        )));
    }
    let tables = scheme.tables();
    let mut e = 0.0;
    for (k, &h) in hidden.iter().enumerate() {
        if h {
            e += params.hidden_bias[k];
        }
    }
    for &(i, s) in ratings {
        params.check_entity(i)?;
        let f = tables.unary_at(s);
        let beta = params.input_bias_row(i);
        for a in 0..params.a() {
            e += beta[a] * f[a];
        }
        for (k, &h) in hidden.iter().enumerate() {
            if h {
                let gam = params.interaction_row(i, k);
                for a in 0..params.a() {
                    e += gam[a] * f[a];
                }
            }
        }
    }
    e += pair_energy(params, &tables, ratings);
    Ok(e)
}

/// Σ over unordered rated neighbour pairs of λ·f_b, counted once per pair.
fn pair_energy(params: &BmParams, tables: &LevelTables, ratings: &[(u32, u8)]) -> f64 {
    let mut e = 0.0;
    for &(i, s) in ratings {
        for &(j, slot) in params.pairs.adjacent(i) {
            if j <= i {
                continue; // count each unordered pair once
            }
            if let Ok(pos) = ratings.binary_search_by_key(&j, |&(it, _)| it) {
                let t = ratings[pos].1;
                let fb = tables.pair_at(s, t);
                for b in 0..params.pairs.b() {
                    e += params.pairs.value(slot as usize, b) * fb;
                }
            }
        }
    }
    e
}

/// Logistic posterior of each hidden unit given the row's ratings.
pub fn hidden_posterior(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
) -> Result<HiddenPosterior> {
    let tables = scheme.tables();
    Ok(hidden_posterior_tables(params, &tables, ratings)?)
}

pub(crate) fn hidden_posterior_tables(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
) -> Result<HiddenPosterior> {
    let args = hidden_args(params, tables, ratings)?;
    Ok(HiddenPosterior {
        probs: args.into_iter().map(sigmoid).collect(),
    })
}

/// Pre-activation of each hidden unit: bias plus Σ over the row of the
/// interaction weights dotted with the rating features.
pub(crate) fn hidden_args(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
) -> Result<Vec<f64>> {
    let mut args = params.hidden_bias.clone();
    for &(i, s) in ratings {
        params.check_entity(i)?;
        let f = tables.unary_at(s);
        for (k, arg) in args.iter_mut().enumerate() {
            let gam = params.interaction_row(i, k);
            let mut dot = 0.0;
            for a in 0..params.a() {
                dot += gam[a] * f[a];
            }
            *arg += dot;
        }
    }
    Ok(args)
}

/// Conditional distribution over the n levels of node `item`, given the
/// rest of the row and a hidden configuration. `item` need not appear in
/// `others` (prediction-time node). `external` is an optional additive
/// per-level bias for this node.
pub fn conditional_rating(
    params: &BmParams,
    scheme: &FeatureScheme,
    item: u32,
    others: &[(u32, u8)],
    hidden: &[bool],
    external: Option<&[f64]>,
) -> Result<Vec<f64>> {
    params.check_entity(item)?;
    if hidden.len() != params.d() {
        return Err(Error::Shape(format!(
            "hidden length {} != d {}",
            hidden.len(),
            params.d()
        )));
    }
    let tables = scheme.tables();
    // fold the active hidden units into one effective feature-space vector
    let mut eff = params.input_bias_row(item).to_vec();
    for (k, &h) in hidden.iter().enumerate() {
        if h {
            let gam = params.interaction_row(item, k);
            for a in 0..params.a() {
                eff[a] += gam[a];
            }
        }
    }
    let mut logits = level_logits(params, &tables, item, others, &eff, external);
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Per-level log-potential of `item`: eff·f(s) plus pair terms against the
/// rated neighbours plus any external bias.
fn level_logits(
    params: &BmParams,
    tables: &LevelTables,
    item: u32,
    others: &[(u32, u8)],
    eff: &[f64],
    external: Option<&[f64]>,
) -> Vec<f64> {
    let n = tables.n_levels();
    let mut logits = vec![0.0; n];
    for (idx, logit) in logits.iter_mut().enumerate() {
        let f = tables.unary_at((idx + 1) as u8);
        let mut v = 0.0;
        for a in 0..params.a() {
            v += eff[a] * f[a];
        }
        if let Some(ext) = external {
            v += ext[idx];
        }
        *logit = v;
    }
    for &(j, slot) in params.pairs.adjacent(item) {
        if let Ok(pos) = others.binary_search_by_key(&j, |&(it, _)| it) {
            let t = others[pos].1;
            let mut lam = 0.0;
            for b in 0..params.pairs.b() {
                lam += params.pairs.value(slot as usize, b);
            }
            for (idx, logit) in logits.iter_mut().enumerate() {
                *logit += lam * tables.pair_at((idx + 1) as u8, t);
            }
        }
    }
    logits
}

/// Mutable Gibbs state over one row: the rated node ids (sorted), their
/// current levels and the hidden bits.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub items: Vec<u32>,
    pub levels: Vec<u8>,
    pub hidden: Vec<bool>,
}

impl GibbsState {
    /// Start a chain clamped at the observed row.
    pub fn from_ratings(ratings: &[(u32, u8)], d: usize) -> Self {
        Self {
            items: ratings.iter().map(|&(i, _)| i).collect(),
            levels: ratings.iter().map(|&(_, s)| s).collect(),
            hidden: vec![false; d],
        }
    }

    pub fn ratings(&self) -> Vec<(u32, u8)> {
        self.items
            .iter()
            .zip(&self.levels)
            .map(|(&i, &s)| (i, s))
            .collect()
    }
}

/// One Gibbs sweep: resample every hidden unit from its logistic
/// conditional given the current ratings, then every rated node from its
/// level conditional given the rest and the new hidden bits.
pub fn gibbs_sweep(
    params: &BmParams,
    scheme: &FeatureScheme,
    state: &mut GibbsState,
    external: Option<&ExternalRow>,
    rng: &mut impl Rng,
) -> Result<()> {
    let tables = scheme.tables();
    gibbs_sweep_tables(params, &tables, state, external, rng)
}

pub(crate) fn gibbs_sweep_tables(
    params: &BmParams,
    tables: &LevelTables,
    state: &mut GibbsState,
    external: Option<&ExternalRow>,
    rng: &mut impl Rng,
) -> Result<()> {
    let ratings = state.ratings();
    let args = hidden_args(params, tables, &ratings)?;
    for (k, arg) in args.into_iter().enumerate() {
        state.hidden[k] = rng.gen::<f64>() < sigmoid(arg);
    }
    for pos in 0..state.items.len() {
        let item = state.items[pos];
        // effective feature weights for the current hidden configuration
        let mut eff = params.input_bias_row(item).to_vec();
        for (k, &h) in state.hidden.iter().enumerate() {
            if h {
                let gam = params.interaction_row(item, k);
                for a in 0..params.a() {
                    eff[a] += gam[a];
                }
            }
        }
        let others: Vec<(u32, u8)> = state
            .items
            .iter()
            .zip(&state.levels)
            .filter(|&(&i, _)| i != item)
            .map(|(&i, &s)| (i, s))
            .collect();
        let ext = external.map(|e| e[pos].as_slice());
        let mut probs = level_logits(params, tables, item, &others, &eff, ext);
        softmax_in_place(&mut probs);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() as u8; // falls back to top level on fp slack
        for (idx, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = (idx + 1) as u8;
                break;
            }
        }
        state.levels[pos] = chosen;
    }
    Ok(())
}
