//! Rating corpus: parsing, filtering, dual-indexed sparse storage and
//! reproducible train/test splits.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::fnv1a64;

pub type UserId = u32;
pub type ItemId = u32;

/// The ordered set of rating levels. Levels are addressed by their 1-based
/// index `s` in `1..=n_levels`; `level_values` carries the numeric value of
/// each level (e.g. star counts) for display and Gaussian normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingScale {
    level_values: Vec<f64>,
}

impl RatingScale {
    pub fn new(level_values: Vec<f64>) -> Result<Self> {
        if level_values.len() < 2 {
            return Err(Error::InvalidArgument(
                "rating scale needs at least 2 levels".into(),
            ));
        }
        if level_values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "rating scale values must be strictly increasing".into(),
            ));
        }
        Ok(Self { level_values })
    }

    /// The common 1..5 star scale.
    pub fn five_star() -> Self {
        Self {
            level_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }

    pub fn n_levels(&self) -> usize {
        self.level_values.len()
    }

    pub fn level_values(&self) -> &[f64] {
        &self.level_values
    }

    pub fn value_of(&self, level: u8) -> f64 {
        self.level_values[(level - 1) as usize]
    }

    /// Map a raw numeric rating to its 1-based level index.
    pub fn level_of_value(&self, value: f64) -> Option<u8> {
        self.level_values
            .iter()
            .position(|&v| (v - value).abs() < 1e-9)
            .map(|p| (p + 1) as u8)
    }

    pub fn contains_level(&self, level: u8) -> bool {
        level >= 1 && (level as usize) <= self.n_levels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RatingTriple {
    pub user: UserId,
    pub item: ItemId,
    /// 1-based level index into the scale.
    pub level: u8,
}

/// Which side of the rating matrix an operation works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    User,
    Item,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::User => "user",
            Axis::Item => "item",
        }
    }
}

/// Sparse rating triples with dual indexing by user and by item.
///
/// Users and items are dense 0-based indices; the raw identifiers from the
/// source file are retained in `user_ids` / `item_ids`. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct RatingStore {
    scale: RatingScale,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    by_user: Vec<Vec<(ItemId, u8)>>,
    by_item: Vec<Vec<(UserId, u8)>>,
    n_ratings: usize,
}

impl RatingStore {
    /// Build a store from triples over pre-assigned dense indices.
    /// Rejects duplicate (user, item) pairs and out-of-range levels.
    pub fn from_triples(
        scale: RatingScale,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        triples: &[RatingTriple],
    ) -> Result<Self> {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        let mut by_user: Vec<Vec<(ItemId, u8)>> = vec![Vec::new(); n_users];
        let mut by_item: Vec<Vec<(UserId, u8)>> = vec![Vec::new(); n_items];
        for t in triples {
            if (t.user as usize) >= n_users || (t.item as usize) >= n_items {
                return Err(Error::Index(format!(
                    "triple ({}, {}) outside {}x{} store",
                    t.user, t.item, n_users, n_items
                )));
            }
            if !scale.contains_level(t.level) {
                return Err(Error::RatingRange {
                    line: 0,
                    value: t.level.to_string(),
                    n_levels: scale.n_levels(),
                });
            }
            by_user[t.user as usize].push((t.item, t.level));
            by_item[t.item as usize].push((t.user, t.level));
        }
        for (u, row) in by_user.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(i, _)| i);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                let dup = row.windows(2).find(|w| w[0].0 == w[1].0).unwrap()[0].0;
                return Err(Error::Duplicate {
                    user: user_ids[u].clone(),
                    item: item_ids[dup as usize].clone(),
                    line: 0,
                });
            }
        }
        for col in by_item.iter_mut() {
            col.sort_unstable_by_key(|&(u, _)| u);
        }
        Ok(Self {
            scale,
            user_ids,
            item_ids,
            by_user,
            by_item,
            n_ratings: triples.len(),
        })
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_ratings(&self) -> usize {
        self.n_ratings
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, raw_id: &str) -> Option<UserId> {
        self.user_ids.iter().position(|s| s == raw_id).map(|p| p as UserId)
    }

    pub fn item_index(&self, raw_id: &str) -> Option<ItemId> {
        self.item_ids.iter().position(|s| s == raw_id).map(|p| p as ItemId)
    }

    /// (item, level) pairs rated by `u`, sorted by item index.
    pub fn user_ratings(&self, u: UserId) -> &[(ItemId, u8)] {
        &self.by_user[u as usize]
    }

    /// (user, level) pairs on item `i`, sorted by user index.
    pub fn item_ratings(&self, i: ItemId) -> &[(UserId, u8)] {
        &self.by_item[i as usize]
    }

    /// Row-major view along an axis: `User` yields per-user (item, level)
    /// rows, `Item` yields per-item (user, level) rows.
    pub fn rows(&self, axis: Axis) -> &[Vec<(u32, u8)>] {
        match axis {
            Axis::User => &self.by_user,
            Axis::Item => &self.by_item,
        }
    }

    pub fn n_entities(&self, axis: Axis) -> usize {
        match axis {
            Axis::User => self.n_users(),
            Axis::Item => self.n_items(),
        }
    }

    pub fn get(&self, u: UserId, i: ItemId) -> Option<u8> {
        let row = &self.by_user[u as usize];
        row.binary_search_by_key(&i, |&(item, _)| item)
            .ok()
            .map(|pos| row[pos].1)
    }

    pub fn triples(&self) -> impl Iterator<Item = RatingTriple> + '_ {
        self.by_user.iter().enumerate().flat_map(|(u, row)| {
            row.iter().map(move |&(item, level)| RatingTriple {
                user: u as UserId,
                item,
                level,
            })
        })
    }

    /// Mean level index over all ratings.
    pub fn mean_level(&self) -> f64 {
        let sum: f64 = self
            .triples()
            .map(|t| t.level as f64)
            .sum();
        sum / self.n_ratings as f64
    }

    /// Canonical CSV export: header then rows sorted by (user, item) dense
    /// index, raw ids and the numeric level value, LF endings.
    pub fn write_canonical_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"user,item,rating\n")?;
        for t in self.triples() {
            writeln!(
                w,
                "{},{},{}",
                self.user_ids[t.user as usize],
                self.item_ids[t.item as usize],
                self.scale.value_of(t.level)
            )?;
        }
        Ok(())
    }

    /// FNV-1a fingerprint of the canonical CSV bytes. Keys neighbour-graph
    /// caches and model/dataset compatibility checks.
    pub fn content_hash(&self) -> u64 {
        let mut buf = Vec::with_capacity(self.n_ratings * 12);
        self.write_canonical_csv(&mut buf)
            .expect("write to Vec cannot fail");
        fnv1a64(&buf)
    }
}

/// Supported input formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp` (timestamp ignored).
    Ml100kTab,
    /// `user::item::rating::timestamp`.
    Ml1mColonColon,
    /// `user,item,rating` with a header line.
    Csv,
}

impl RatingFormat {
    pub fn name(self) -> &'static str {
        match self {
            RatingFormat::Ml100kTab => "ml100k_tab",
            RatingFormat::Ml1mColonColon => "ml1m_coloncolon",
            RatingFormat::Csv => "csv",
        }
    }
}

impl FromStr for RatingFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml100k_tab" => Ok(RatingFormat::Ml100kTab),
            "ml1m_coloncolon" => Ok(RatingFormat::Ml1mColonColon),
            "csv" => Ok(RatingFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown rating format '{other}' (expected ml100k_tab, ml1m_coloncolon or csv)"
            ))),
        }
    }
}

/// Parse a rating file. Raw user/item ids are remapped to dense 0-based
/// indices in order of first appearance; the id maps are retained.
pub fn parse_ratings(
    reader: impl BufRead,
    format: RatingFormat,
    scale: &RatingScale,
) -> Result<RatingStore> {
    let mut user_map: HashMap<String, UserId> = HashMap::new();
    let mut item_map: HashMap<String, ItemId> = HashMap::new();
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut triples: Vec<RatingTriple> = Vec::new();
    let mut seen: HashMap<(UserId, ItemId), ()> = HashMap::new();

    let mut line_no = 0usize;
    for line in reader.lines() {
        line_no += 1;
        let line = line?;
        if line_no == 1 && format == RatingFormat::Csv {
            let header = line.trim();
            if header != "user,item,rating" {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header 'user,item,rating', got '{header}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingFormat::Ml100kTab => line.split('\t').collect(),
            RatingFormat::Ml1mColonColon => line.split("::").collect(),
            RatingFormat::Csv => line.split(',').collect(),
        };
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        let (user_raw, item_raw, rating_raw) =
            (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if user_raw.is_empty() || item_raw.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty user or item id".into(),
            });
        }
        let value: f64 = rating_raw.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("rating '{rating_raw}' is not a number"),
        })?;
        let level = scale.level_of_value(value).ok_or(Error::RatingRange {
            line: line_no,
            value: rating_raw.to_string(),
            n_levels: scale.n_levels(),
        })?;
        let user = *user_map.entry(user_raw.to_string()).or_insert_with(|| {
            user_ids.push(user_raw.to_string());
            (user_ids.len() - 1) as UserId
        });
        let item = *item_map.entry(item_raw.to_string()).or_insert_with(|| {
            item_ids.push(item_raw.to_string());
            (item_ids.len() - 1) as ItemId
        });
        if seen.insert((user, item), ()).is_some() {
            return Err(Error::Duplicate {
                user: user_raw.to_string(),
                item: item_raw.to_string(),
                line: line_no,
            });
        }
        triples.push(RatingTriple { user, item, level });
    }
    RatingStore::from_triples(scale.clone(), user_ids, item_ids, &triples)
}

/// Remove users with ≤ `min_user_ratings` ratings and items with
/// ≤ `min_item_ratings` ratings, iterating to a fixed point (removing an
/// item can drop a user under threshold and vice versa). Surviving indices
/// are re-densified preserving order.
pub fn filter_min_counts(
    store: &RatingStore,
    min_user_ratings: usize,
    min_item_ratings: usize,
) -> Result<RatingStore> {
    let mut user_alive = vec![true; store.n_users()];
    let mut item_alive = vec![true; store.n_items()];
    loop {
        let mut changed = false;
        let mut user_counts = vec![0usize; store.n_users()];
        let mut item_counts = vec![0usize; store.n_items()];
        for t in store.triples() {
            if user_alive[t.user as usize] && item_alive[t.item as usize] {
                user_counts[t.user as usize] += 1;
                item_counts[t.item as usize] += 1;
            }
        }
        for (u, alive) in user_alive.iter_mut().enumerate() {
            if *alive && user_counts[u] <= min_user_ratings {
                *alive = false;
                changed = true;
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && item_counts[i] <= min_item_ratings {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_remap: Vec<Option<UserId>> = vec![None; store.n_users()];
    let mut item_remap: Vec<Option<ItemId>> = vec![None; store.n_items()];
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    for (u, &alive) in user_alive.iter().enumerate() {
        if alive {
            user_remap[u] = Some(user_ids.len() as UserId);
            user_ids.push(store.user_ids[u].clone());
        }
    }
    for (i, &alive) in item_alive.iter().enumerate() {
        if alive {
            item_remap[i] = Some(item_ids.len() as ItemId);
            item_ids.push(store.item_ids[i].clone());
        }
    }
    let triples: Vec<RatingTriple> = store
        .triples()
        .filter_map(|t| {
            match (user_remap[t.user as usize], item_remap[t.item as usize]) {
                (Some(u), Some(i)) => Some(RatingTriple {
                    user: u,
                    item: i,
                    level: t.level,
                }),
                _ => None,
            }
        })
        .collect();
    if triples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    RatingStore::from_triples(store.scale.clone(), user_ids, item_ids, &triples)
}

/// A disjoint train/test partition of a source store. Both halves share the
/// source's dense index space so model parameters line up across them.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: RatingStore,
    pub test: RatingStore,
    pub seed: u64,
}

/// Per-user stratified split: a uniformly random `train_fraction` share of
/// each user's ratings (rounded, at least 1 on each side) goes to train.
/// Deterministic under a fixed seed.
pub fn split_per_user(store: &RatingStore, train_fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_triples = Vec::new();
    let mut test_triples = Vec::new();
    for u in 0..store.n_users() {
        let row = store.user_ratings(u as UserId);
        if row.len() < 2 {
            return Err(Error::SplitTooFew {
                user: store.user_ids[u].clone(),
                count: row.len(),
            });
        }
        let mut shuffled: Vec<(ItemId, u8)> = row.to_vec();
        shuffled.shuffle(&mut rng);
        let n_train = ((train_fraction * row.len() as f64).round() as usize)
            .clamp(1, row.len() - 1);
        for (pos, &(item, level)) in shuffled.iter().enumerate() {
            let t = RatingTriple {
                user: u as UserId,
                item,
                level,
            };
            if pos < n_train {
                train_triples.push(t);
            } else {
                test_triples.push(t);
            }
        }
    }
    let train = RatingStore::from_triples(
        store.scale.clone(),
        store.user_ids.clone(),
        store.item_ids.clone(),
        &train_triples,
    )?;
    let test = RatingStore::from_triples(
        store.scale.clone(),
        store.user_ids.clone(),
        store.item_ids.clone(),
        &test_triples,
    )?;
    Ok(DataSplit { train, test, seed })
}
