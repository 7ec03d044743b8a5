//! Training procedures for the per-row model: contrastive divergence,
//! exact pseudo-likelihood with hidden units marginalized in closed form,
//! the Gaussian mean-field reconstruction objective, and the block SGD
//! driver shared by user-only and joint training.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::corpus::{Axis, RatingStore};
use crate::error::{Error, Result};
use crate::features::{FeatureScheme, LevelTables, SchemeKind};
use crate::inference;
use crate::math::{logsumexp, sigmoid, softplus};
use crate::neighbors::NeighborGraph;
use crate::user_bm::{
    gibbs_sweep_tables, hidden_args, BmParams, ExternalRow, GibbsState, PairWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    /// k-step contrastive divergence.
    Cd,
    /// Exact pseudo-likelihood ascent.
    Pl,
    /// Gaussian mean-field reconstruction descent.
    GaussianPl,
}

impl TrainMethod {
    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Cd => "cd",
            TrainMethod::Pl => "pl",
            TrainMethod::GaussianPl => "gaussian_pl",
        }
    }
}

impl std::str::FromStr for TrainMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(TrainMethod::Cd),
            "pl" => Ok(TrainMethod::Pl),
            "gaussian_pl" => Ok(TrainMethod::GaussianPl),
            other => Err(Error::InvalidArgument(format!(
                "unknown training method '{other}' (expected cd, pl or gaussian_pl)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub method: TrainMethod,
    /// Hidden layer width.
    pub hidden: usize,
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub block_size: usize,
    pub max_epochs: usize,
    pub init_sigma: f64,
    pub seed: u64,
    pub l2: f64,
    /// Epochs without validation-MAE improvement before stopping
    /// (0 disables early stopping).
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: TrainMethod::Cd,
            hidden: 20,
            cd_steps: 1,
            learning_rate: 0.1,
            block_size: 100,
            max_epochs: 20,
            init_sigma: 0.01,
            seed: 0,
            l2: 0.0,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps < 1 {
            return Err(Error::InvalidArgument("cd_steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be >= 0".into()));
        }
        if self.block_size < 1 {
            return Err(Error::InvalidArgument("block_size must be >= 1".into()));
        }
        if self.init_sigma < 0.0 || self.l2 < 0.0 {
            return Err(Error::InvalidArgument(
                "init_sigma and l2 must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Dense gradient buffer with the same shape as the parameters it was
/// created for. Holds the ascent direction of the configured objective.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    pub hidden_bias: Vec<f64>,
    pub input_bias: Vec<f64>,
    pub interaction: Vec<f64>,
    pub pair: Vec<f64>,
    n_entities: usize,
    d: usize,
    a: usize,
}

impl GradientAccumulator {
    pub fn new_like(params: &BmParams) -> Self {
        Self {
            hidden_bias: vec![0.0; params.d()],
            input_bias: vec![0.0; params.n_entities() * params.a()],
            interaction: vec![0.0; params.n_entities() * params.d() * params.a()],
            pair: vec![0.0; params.pairs.values().len()],
            n_entities: params.n_entities(),
            d: params.d(),
            a: params.a(),
        }
    }

    pub fn zero(&mut self) {
        self.hidden_bias.fill(0.0);
        self.input_bias.fill(0.0);
        self.interaction.fill(0.0);
        self.pair.fill(0.0);
    }

    pub fn scale(&mut self, c: f64) {
        for v in self
            .hidden_bias
            .iter_mut()
            .chain(self.input_bias.iter_mut())
            .chain(self.interaction.iter_mut())
            .chain(self.pair.iter_mut())
        {
            *v *= c;
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            *a += b;
        }
        for (a, b) in self.input_bias.iter_mut().zip(&other.input_bias) {
            *a += b;
        }
        for (a, b) in self.interaction.iter_mut().zip(&other.interaction) {
            *a += b;
        }
        for (a, b) in self.pair.iter_mut().zip(&other.pair) {
            *a += b;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.hidden_bias.len()
                + self.input_bias.len()
                + self.interaction.len()
                + self.pair.len(),
        );
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.input_bias);
        out.extend_from_slice(&self.interaction);
        out.extend_from_slice(&self.pair);
        out
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let x = self.flatten();
        let y = other.flatten();
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }

    #[inline]
    fn input_idx(&self, i: u32, a: usize) -> usize {
        i as usize * self.a + a
    }

    #[inline]
    fn inter_idx(&self, i: u32, k: usize, a: usize) -> usize {
        (i as usize * self.d + k) * self.a + a
    }

    /// params += step · self, with optional L2 shrink toward zero.
    fn apply_to(&self, params: &mut BmParams, step: f64, l2: f64) {
        debug_assert_eq!(
            (self.n_entities, self.d, self.a),
            (params.n_entities(), params.d(), params.a())
        );
        let shrink = step * l2;
        for (p, g) in params.hidden_bias.iter_mut().zip(&self.hidden_bias) {
            *p += step * g - shrink * *p;
        }
        for (p, g) in params.input_bias.iter_mut().zip(&self.input_bias) {
            *p += step * g - shrink * *p;
        }
        for (p, g) in params.interaction.iter_mut().zip(&self.interaction) {
            *p += step * g - shrink * *p;
        }
        for (p, g) in params.pairs.values_mut().iter_mut().zip(&self.pair) {
            *p += step * g - shrink * *p;
        }
    }
}

/// Add the soft data-side (or, negated, reconstruction-side) sufficient
/// statistics of one row: hidden posteriors, unary features, their products
/// and pair features over rated neighbour pairs.
fn accumulate_statistics(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
    posterior: &[f64],
    sign: f64,
    acc: &mut GradientAccumulator,
) {
    for (k, &p) in posterior.iter().enumerate() {
        acc.hidden_bias[k] += sign * p;
    }
    for &(i, s) in ratings {
        let f = tables.unary_at(s);
        for a in 0..params.a() {
            let idx = acc.input_idx(i, a);
            acc.input_bias[idx] += sign * f[a];
        }
        for (k, &p) in posterior.iter().enumerate() {
            let sp = sign * p;
            for a in 0..params.a() {
                let idx = acc.inter_idx(i, k, a);
                acc.interaction[idx] += sp * f[a];
            }
        }
        for &(j, slot) in params.pairs.adjacent(i) {
            if j <= i {
                continue;
            }
            if let Ok(pos) = ratings.binary_search_by_key(&j, |&(it, _)| it) {
                let fb = tables.pair_at(s, ratings[pos].1);
                for b in 0..params.pairs.b() {
                    acc.pair[slot as usize * params.pairs.b() + b] += sign * fb;
                }
            }
        }
    }
}

fn posterior_from_args(args: &[f64]) -> Vec<f64> {
    args.iter().map(|&x| sigmoid(x)).collect()
}

/// Contrastive-divergence gradient of one row: soft data statistics минус
/// statistics of the state reached after `cd_steps` Gibbs sweeps started
/// from the data. Deterministic under a fixed rng.
pub fn cd_gradient(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
    cd_steps: usize,
    rng: &mut impl Rng,
) -> Result<GradientAccumulator> {
    let tables = scheme.tables();
    let mut acc = GradientAccumulator::new_like(params);
    accumulate_cd(params, &tables, ratings, None, cd_steps, rng, &mut acc)?;
    Ok(acc)
}

fn accumulate_cd(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
    external: Option<&ExternalRow>,
    cd_steps: usize,
    rng: &mut impl Rng,
    acc: &mut GradientAccumulator,
) -> Result<()> {
    if ratings.is_empty() {
        return Ok(());
    }
    let data_post = posterior_from_args(&hidden_args(params, tables, ratings)?);
    accumulate_statistics(params, tables, ratings, &data_post, 1.0, acc);

    let mut state = GibbsState::from_ratings(ratings, params.d());
    for _ in 0..cd_steps {
        gibbs_sweep_tables(params, tables, &mut state, external, rng)?;
    }
    let recon = state.ratings();
    let recon_post = posterior_from_args(&hidden_args(params, tables, &recon)?);
    accumulate_statistics(params, tables, &recon, &recon_post, -1.0, acc);
    Ok(())
}

/// Exact maximum-likelihood gradient of one row, with model expectations
/// computed by enumerating every rating configuration (hidden units are
/// summed out in closed form per configuration). Guarded to tiny models;
/// this is the testing oracle, not a production path.
pub fn exact_ml_gradient(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
) -> Result<GradientAccumulator> {
    let tables = scheme.tables();
    let n = tables.n_levels();
    let n_items = ratings.len();
    if params.d() > 12 || n_items > 8 {
        return Err(Error::EnumerationTooLarge(format!(
            "exact gradient limited to d <= 12 and <= 8 rated items, got d={} items={}",
            params.d(),
            n_items
        )));
    }
    let mut acc = GradientAccumulator::new_like(params);
    if n_items == 0 {
        return Ok(acc);
    }
    let n_configs = n.checked_pow(n_items as u32).ok_or_else(|| {
        Error::EnumerationTooLarge("level configuration count overflows".into())
    })?;

    // data term with soft hidden posteriors
    let data_post = posterior_from_args(&hidden_args(params, &tables, ratings)?);
    accumulate_statistics(params, &tables, ratings, &data_post, 1.0, &mut acc);

    // enumerate model expectations: first the log-normalizer, then the
    // probability-weighted statistics
    let items: Vec<u32> = ratings.iter().map(|&(i, _)| i).collect();
    let mut config = vec![1u8; n_items];
    let mut log_ws = Vec::with_capacity(n_configs);
    let mut assoc: Vec<(u32, u8)> = items.iter().map(|&i| (i, 1)).collect();
    loop {
        for (pos, &lvl) in config.iter().enumerate() {
            assoc[pos].1 = lvl;
        }
        log_ws.push(log_weight(params, &tables, &assoc));
        if !advance(&mut config, n as u8) {
            break;
        }
    }
    let log_z = logsumexp(&log_ws);

    let mut config = vec![1u8; n_items];
    let mut idx = 0usize;
    loop {
        for (pos, &lvl) in config.iter().enumerate() {
            assoc[pos].1 = lvl;
        }
        let w = (log_ws[idx] - log_z).exp();
        let post = posterior_from_args(&hidden_args(params, &tables, &assoc)?);
        accumulate_statistics(params, &tables, &assoc, &post, -w, &mut acc);
        idx += 1;
        if !advance(&mut config, n as u8) {
            break;
        }
    }
    Ok(acc)
}

/// Unnormalized log-weight of a rating configuration with hidden units
/// summed out: visible potentials plus Σ_k log(1 + exp(hidden arg)).
fn log_weight(params: &BmParams, tables: &LevelTables, ratings: &[(u32, u8)]) -> f64 {
    let mut vis = 0.0;
    for &(i, s) in ratings {
        let f = tables.unary_at(s);
        let beta = params.input_bias_row(i);
        for a in 0..params.a() {
            vis += beta[a] * f[a];
        }
        for &(j, slot) in params.pairs.adjacent(i) {
            if j <= i {
                continue;
            }
            if let Ok(pos) = ratings.binary_search_by_key(&j, |&(it, _)| it) {
                let fb = tables.pair_at(s, ratings[pos].1);
                for b in 0..params.pairs.b() {
                    vis += params.pairs.value(slot as usize, b) * fb;
                }
            }
        }
    }
    let args = hidden_args(params, tables, ratings).expect("entities validated");
    vis + args.into_iter().map(softplus).sum::<f64>()
}

/// Odometer increment over levels 1..=n; false once it wraps around.
fn advance(config: &mut [u8], n: u8) -> bool {
    for c in config.iter_mut() {
        if *c < n {
            *c += 1;
            return true;
        }
        *c = 1;
    }
    false
}

/// Per-item working set for the pseudo-likelihood objective and gradient:
/// per-level log-normalizers, hidden pre-activations and the resulting
/// level conditional.
struct PlItem {
    log_z: Vec<f64>,     // n
    theta: Vec<f64>,     // n × d, level-major
    probs: Vec<f64>,     // n
    diff: Vec<f64>,      // n: I[s = observed] − P(s | rest)
    observed: u8,
}

fn pl_item(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
    hidden_base: &[f64],
    pos: usize,
    external: Option<&ExternalRow>,
) -> PlItem {
    let n = tables.n_levels();
    let d = params.d();
    let (item, observed) = ratings[pos];
    let f_obs = tables.unary_at(observed);

    // remove this item's own data contribution from the hidden argument
    let mut base = vec![0.0; d];
    for (k, b) in base.iter_mut().enumerate() {
        let gam = params.interaction_row(item, k);
        let mut dot = 0.0;
        for a in 0..params.a() {
            dot += gam[a] * f_obs[a];
        }
        *b = hidden_base[k] - dot;
    }

    let mut log_z = vec![0.0; n];
    let mut theta = vec![0.0; n * d];
    for s_idx in 0..n {
        let f = tables.unary_at((s_idx + 1) as u8);
        let beta = params.input_bias_row(item);
        let mut vis = 0.0;
        for a in 0..params.a() {
            vis += beta[a] * f[a];
        }
        for &(j, slot) in params.pairs.adjacent(item) {
            if let Ok(p) = ratings.binary_search_by_key(&j, |&(it, _)| it) {
                if p == pos {
                    continue;
                }
                let fb = tables.pair_at((s_idx + 1) as u8, ratings[p].1);
                for b in 0..params.pairs.b() {
                    vis += params.pairs.value(slot as usize, b) * fb;
                }
            }
        }
        if let Some(ext) = external {
            vis += ext[pos][s_idx];
        }
        let mut hid = 0.0;
        for k in 0..d {
            let gam = params.interaction_row(item, k);
            let mut dot = 0.0;
            for a in 0..params.a() {
                dot += gam[a] * f[a];
            }
            let t = base[k] + dot;
            theta[s_idx * d + k] = t;
            hid += softplus(t);
        }
        log_z[s_idx] = vis + hid;
    }
    let lse = logsumexp(&log_z);
    let probs: Vec<f64> = log_z.iter().map(|&v| (v - lse).exp()).collect();
    let mut diff = probs.iter().map(|&p| -p).collect::<Vec<f64>>();
    diff[(observed - 1) as usize] += 1.0;
    PlItem {
        log_z,
        theta,
        probs,
        diff,
        observed,
    }
}

/// Per-item conditionals P(r_i | rest of row) under the closed-form hidden
/// marginalization, one n-vector per rated item.
pub fn pl_conditionals(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
) -> Result<Vec<Vec<f64>>> {
    let tables = scheme.tables();
    let hidden_base = hidden_args(params, &tables, ratings)?;
    Ok((0..ratings.len())
        .map(|pos| pl_item(params, &tables, ratings, &hidden_base, pos, None).probs)
        .collect())
}

/// Log pseudo-likelihood of one row: Σ over rated items of the log
/// conditional of the observed level given the rest of the row, with
/// hidden units marginalized in closed form. Log-domain throughout.
pub fn pl_objective(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
) -> Result<f64> {
    let tables = scheme.tables();
    pl_objective_tables(params, &tables, ratings, None)
}

pub(crate) fn pl_objective_tables(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
    external: Option<&ExternalRow>,
) -> Result<f64> {
    let hidden_base = hidden_args(params, tables, ratings)?;
    let mut obj = 0.0;
    for pos in 0..ratings.len() {
        let it = pl_item(params, tables, ratings, &hidden_base, pos, external);
        let lse = logsumexp(&it.log_z);
        obj += it.log_z[(it.observed - 1) as usize] - lse;
    }
    Ok(obj)
}

/// Analytic pseudo-likelihood gradient of one row for all four parameter
/// blocks. The pair-weight block follows the same difference-weighted
/// template as the printed blocks and is gated by the finite-difference
/// suite before use.
pub fn pl_gradient(
    params: &BmParams,
    scheme: &FeatureScheme,
    ratings: &[(u32, u8)],
) -> Result<GradientAccumulator> {
    let tables = scheme.tables();
    let mut acc = GradientAccumulator::new_like(params);
    accumulate_pl(params, &tables, ratings, None, &mut acc)?;
    Ok(acc)
}

fn accumulate_pl(
    params: &BmParams,
    tables: &LevelTables,
    ratings: &[(u32, u8)],
    external: Option<&ExternalRow>,
    acc: &mut GradientAccumulator,
) -> Result<()> {
    if ratings.is_empty() {
        return Ok(());
    }
    let n = tables.n_levels();
    let d = params.d();
    let hidden_base = hidden_args(params, tables, ratings)?;

    // c[pos][k] = Σ_s diff(s) σ(θ_k(s)) for the item at `pos`
    let mut center_hidden = vec![0.0; ratings.len() * d];
    for pos in 0..ratings.len() {
        let (item, _) = ratings[pos];
        let it = pl_item(params, tables, ratings, &hidden_base, pos, external);

        for s_idx in 0..n {
            let ds = it.diff[s_idx];
            if ds == 0.0 {
                continue;
            }
            let f = tables.unary_at((s_idx + 1) as u8);
            for a in 0..params.a() {
                let idx = acc.input_idx(item, a);
                acc.input_bias[idx] += ds * f[a];
            }
            for k in 0..d {
                let sig = sigmoid(it.theta[s_idx * d + k]);
                let w = ds * sig;
                center_hidden[pos * d + k] += w;
                for a in 0..params.a() {
                    let idx = acc.inter_idx(item, k, a);
                    acc.interaction[idx] += w * f[a];
                }
            }
            // pair block, centre-node contribution of each rated neighbour
            for &(j, slot) in params.pairs.adjacent(item) {
                if let Ok(p) = ratings.binary_search_by_key(&j, |&(itm, _)| itm) {
                    if p == pos {
                        continue;
                    }
                    let fb = tables.pair_at((s_idx + 1) as u8, ratings[p].1);
                    for b in 0..params.pairs.b() {
                        acc.pair[slot as usize * params.pairs.b() + b] += ds * fb;
                    }
                }
            }
        }
    }

    // hidden-bias block plus the off-centre interaction contributions:
    // every other item j enters the hidden argument through its observed
    // features, weighted by the total centre mass Σ_i c[i][k] minus its own
    let mut total_hidden = vec![0.0; d];
    for pos in 0..ratings.len() {
        for k in 0..d {
            total_hidden[k] += center_hidden[pos * d + k];
        }
    }
    for (k, &t) in total_hidden.iter().enumerate() {
        acc.hidden_bias[k] += t;
    }
    for pos in 0..ratings.len() {
        let (item, observed) = ratings[pos];
        let f_obs = tables.unary_at(observed);
        for k in 0..d {
            let w = total_hidden[k] - center_hidden[pos * d + k];
            if w == 0.0 {
                continue;
            }
            for a in 0..params.a() {
                let idx = acc.inter_idx(item, k, a);
                acc.interaction[idx] += w * f_obs[a];
            }
        }
    }
    Ok(())
}

/// Gaussian mean-field reconstruction error ½ Σ (x̄_i − μ_i)² of one row of
/// normalized ratings.
pub fn gaussian_reconstruction_error(
    params: &BmParams,
    ratings_normalized: &[(u32, f64)],
    external_mean: Option<&[f64]>,
) -> Result<f64> {
    let (_, _, eps) = gaussian_row_stats(params, ratings_normalized, external_mean)?;
    Ok(0.5 * eps.iter().map(|e| e * e).sum::<f64>())
}

/// Posterior, reconstruction means and residuals of one Gaussian row.
fn gaussian_row_stats(
    params: &BmParams,
    xs: &[(u32, f64)],
    external_mean: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if params.a() != 1 {
        return Err(Error::Shape(format!(
            "gaussian parameters must have unary width 1, got {}",
            params.a()
        )));
    }
    let d = params.d();
    let mut args = params.hidden_bias.clone();
    for &(i, x) in xs {
        for (k, arg) in args.iter_mut().enumerate() {
            *arg += params.interaction_row(i, k)[0] * x;
        }
    }
    let post: Vec<f64> = args.into_iter().map(sigmoid).collect();
    let mut mus = Vec::with_capacity(xs.len());
    let mut eps = Vec::with_capacity(xs.len());
    for (pos, &(i, x)) in xs.iter().enumerate() {
        let mut mu = params.input_bias_row(i)[0];
        for (k, &p) in post.iter().enumerate() {
            mu += params.interaction_row(i, k)[0] * p;
        }
        for &(j, slot) in params.pairs.adjacent(i) {
            if let Ok(p) = xs.binary_search_by_key(&j, |&(it, _)| it) {
                mu += params.pairs.value(slot as usize, 0) * xs[p].1;
            }
        }
        if let Some(ext) = external_mean {
            mu += ext[pos];
        }
        let _ = d;
        mus.push(mu);
        eps.push(x - mu);
    }
    Ok((post, mus, eps))
}

/// Descent gradients of the Gaussian reconstruction error, block for block
/// as printed: the input-bias and pair blocks are exact derivatives; the
/// hidden blocks treat the posterior's logistic slope as the posterior
/// itself and are used as mean-field update directions.
pub fn gaussian_pl_gradient(
    params: &BmParams,
    ratings_normalized: &[(u32, f64)],
) -> Result<GradientAccumulator> {
    let mut acc = GradientAccumulator::new_like(params);
    accumulate_gaussian(params, ratings_normalized, None, -1.0, &mut acc)?;
    Ok(acc)
}

/// Accumulate `sign` × (−∂E), i.e. sign=+1 adds the ascent direction used
/// by SGD and sign=−1 yields the printed descent gradients of E.
fn accumulate_gaussian(
    params: &BmParams,
    xs: &[(u32, f64)],
    external_mean: Option<&[f64]>,
    sign: f64,
    acc: &mut GradientAccumulator,
) -> Result<()> {
    if xs.is_empty() {
        return Ok(());
    }
    let (post, _, eps) = gaussian_row_stats(params, xs, external_mean)?;
    let d = params.d();

    // S_k = Σ_j ε_j γ_jk
    let mut s = vec![0.0; d];
    for (pos, &(j, _)) in xs.iter().enumerate() {
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += eps[pos] * params.interaction_row(j, k)[0];
        }
    }
    for k in 0..d {
        acc.hidden_bias[k] += sign * post[k] * s[k];
    }
    for (pos, &(i, x)) in xs.iter().enumerate() {
        let idx = acc.input_idx(i, 0);
        acc.input_bias[idx] += sign * eps[pos];
        for k in 0..d {
            let idx = acc.inter_idx(i, k, 0);
            acc.interaction[idx] += sign * post[k] * (eps[pos] + post[k] * x * s[k]);
        }
        // pair block: −∂E/∂λ_ij = ε_i x̄_j + ε_j x̄_i, each unordered pair once
        for &(j, slot) in params.pairs.adjacent(i) {
            if j <= i {
                continue;
            }
            if let Ok(p) = xs.binary_search_by_key(&j, |&(it, _)| it) {
                acc.pair[slot as usize] += sign * (eps[pos] * xs[p].1 + eps[p] * x);
            }
        }
    }
    Ok(())
}

/// Fixed per-row energy contributions from outside this side of the model,
/// one entry per row. Used by the joint trainer's alternating phases.
pub(crate) enum PhaseExternals<'a> {
    None,
    /// Per node, per level additive bias (discrete schemes).
    Levels(&'a [ExternalRow]),
    /// Per node additive reconstruction-mean offset (Gaussian scheme).
    Means(&'a [Vec<f64>]),
}

impl PhaseExternals<'_> {
    fn levels(&self, row: usize) -> Option<&ExternalRow> {
        match self {
            PhaseExternals::Levels(rows) => Some(&rows[row]),
            _ => None,
        }
    }

    fn means(&self, row: usize) -> Option<&[f64]> {
        match self {
            PhaseExternals::Means(rows) => Some(rows[row].as_slice()),
            _ => None,
        }
    }
}

pub(crate) fn normalize_row(scheme: &FeatureScheme, row: &[(u32, u8)]) -> Vec<(u32, f64)> {
    let norm = scheme
        .normalizer()
        .expect("gaussian training requires a fitted normalizer");
    row.iter().map(|&(i, s)| (i, norm.transform(s))).collect()
}

/// One SGD epoch over shuffled row blocks: accumulate the configured
/// per-row gradient over each block, then apply the mean with the
/// learning rate (and optional L2 shrink).
pub(crate) fn run_one_epoch(
    params: &mut BmParams,
    rows: &[Vec<(u32, u8)>],
    externals: &PhaseExternals,
    cfg: &TrainConfig,
    scheme: &FeatureScheme,
    tables: &LevelTables,
    acc: &mut GradientAccumulator,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    for block in order.chunks(cfg.block_size) {
        acc.zero();
        for &r in block {
            let row = &rows[r];
            if row.is_empty() {
                continue;
            }
            match cfg.method {
                TrainMethod::Cd => accumulate_cd(
                    params,
                    tables,
                    row,
                    externals.levels(r),
                    cfg.cd_steps,
                    rng,
                    acc,
                )?,
                TrainMethod::Pl => {
                    accumulate_pl(params, tables, row, externals.levels(r), acc)?
                }
                TrainMethod::GaussianPl => {
                    let xs = normalize_row(scheme, row);
                    accumulate_gaussian(params, &xs, externals.means(r), 1.0, acc)?
                }
            }
        }
        acc.scale(1.0 / block.len() as f64);
        acc.apply_to(params, cfg.learning_rate, cfg.l2);
    }
    Ok(())
}

/// Exactly computable training diagnostic: mean pseudo-likelihood of a
/// fixed probe prefix of rows (mean negative reconstruction error for the
/// Gaussian method).
pub(crate) fn probe_objective(
    params: &BmParams,
    scheme: &FeatureScheme,
    tables: &LevelTables,
    rows: &[Vec<(u32, u8)>],
    method: TrainMethod,
) -> f64 {
    let probe = rows.len().min(32);
    if probe == 0 {
        return f64::NAN;
    }
    let mut total = 0.0;
    for row in rows.iter().take(probe) {
        let v = match method {
            TrainMethod::GaussianPl => {
                let xs = normalize_row(scheme, row);
                gaussian_reconstruction_error(params, &xs, None).map(|e| -e)
            }
            _ => pl_objective_tables(params, tables, row, None),
        };
        total += v.unwrap_or(f64::NAN);
    }
    total / probe as f64
}

/// Mean absolute error of the expected-rating read-out on held-out
/// ratings, predicting each from the corresponding training row.
pub(crate) fn validation_mae(
    params: &BmParams,
    scheme: &FeatureScheme,
    train: &RatingStore,
    held_out: &RatingStore,
) -> f64 {
    let mut err = 0.0;
    let mut count = 0usize;
    for u in 0..held_out.n_users() {
        let val_row = held_out.user_ratings(u as u32);
        if val_row.is_empty() {
            continue;
        }
        let train_row = train.user_ratings(u as u32);
        for &(item, level) in val_row {
            if let Ok(pred) = inference::predict_meanfield(params, scheme, train_row, item) {
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

/// One per-epoch training log row.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub objective_estimate: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,objective_estimate,val_mae,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3}",
            self.epoch, self.objective_estimate, self.val_mae, self.seconds
        )
    }
}

/// Tracks the best validation MAE and counts epochs without improvement.
pub(crate) struct Patience {
    limit: usize,
    best: f64,
    stale: usize,
}

impl Patience {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            limit,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns true when training should stop.
    pub(crate) fn update(&mut self, val_mae: f64) -> bool {
        if self.limit == 0 || !val_mae.is_finite() {
            return false;
        }
        if val_mae < self.best - 1e-12 {
            self.best = val_mae;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.limit
    }
}

/// Train a per-user model by block SGD: hidden-associated parameters start
/// from N(0, init_sigma²), input biases and pair weights from zero; the
/// pair connectivity is frozen from the item neighbour graph. Stops at
/// `max_epochs`, or earlier when the validation MAE stops improving.
pub fn sgd_train(
    cfg: &TrainConfig,
    store: &RatingStore,
    scheme: &FeatureScheme,
    item_graph: Option<&NeighborGraph>,
    val: Option<&RatingStore>,
) -> Result<(BmParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if cfg.method == TrainMethod::GaussianPl && scheme.kind() != SchemeKind::Gaussian {
        return Err(Error::InvalidArgument(
            "gaussian_pl training requires the gaussian scheme".into(),
        ));
    }
    if let Some(g) = item_graph {
        if g.axis != Axis::Item {
            return Err(Error::InvalidArgument(
                "user-side training takes an item-axis neighbour graph".into(),
            ));
        }
        if g.n_entities() != store.n_items() {
            return Err(Error::Shape(format!(
                "graph covers {} items, store has {}",
                g.n_entities(),
                store.n_items()
            )));
        }
    }
    let pairs = match item_graph {
        Some(g) => PairWeights::from_graph(g, scheme.pair_len()),
        None => PairWeights::empty(store.n_items(), scheme.pair_len()),
    };
    let tables = scheme.tables();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = BmParams::init_random(
        store.n_items(),
        cfg.hidden,
        scheme.unary_len(),
        pairs,
        cfg.init_sigma,
        &mut rng,
    );
    let rows = store.rows(Axis::User);
    let mut acc = GradientAccumulator::new_like(&params);
    let mut stats = Vec::with_capacity(cfg.max_epochs);
    let mut patience = Patience::new(if val.is_some() { cfg.patience } else { 0 });
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        run_one_epoch(
            &mut params,
            rows,
            &PhaseExternals::None,
            cfg,
            scheme,
            &tables,
            &mut acc,
            &mut rng,
        )?;
        if !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let objective_estimate =
            probe_objective(&params, scheme, &tables, rows, cfg.method);
        let val_mae = val
            .map(|v| validation_mae(&params, scheme, store, v))
            .unwrap_or(f64::NAN);
        stats.push(EpochStats {
            epoch,
            objective_estimate,
            val_mae,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if patience.update(val_mae) {
            break;
        }
    }
    Ok((params, stats))
}
