//! Pearson correlations between user pairs and item pairs, and the top-K
//! positively-correlated neighbourhoods that fix the models' input-layer
//! connectivity.

use std::io::{BufRead, Write};

use crate::corpus::{Axis, RatingStore};
use crate::error::{Error, Result};

/// Per-entity top-K positively-correlated neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub axis: Axis,
    pub k_top: usize,
    pub min_overlap: usize,
    neighbors: Vec<Vec<(u32, f64)>>,
}

/// Pearson correlation of two entities over their co-rated set, using
/// integer level indices. `None` when the overlap is below `min_overlap`
/// or either side has zero variance over the co-rated set.
pub fn pearson(
    store: &RatingStore,
    axis: Axis,
    a: u32,
    b: u32,
    min_overlap: usize,
) -> Option<f64> {
    let rows = store.rows(axis);
    pearson_rows(&rows[a as usize], &rows[b as usize], min_overlap)
}

fn pearson_rows(ra: &[(u32, u8)], rb: &[(u32, u8)], min_overlap: usize) -> Option<f64> {
    // merge-intersect two id-sorted rows
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < ra.len() && j < rb.len() {
        match ra[i].0.cmp(&rb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xs.push(ra[i].1 as f64);
                ys.push(rb[j].1 as f64);
                i += 1;
                j += 1;
            }
        }
    }
    let n = xs.len();
    if n < min_overlap.max(2) {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        let dx = xs[k] - mx;
        let dy = ys[k] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Build the top-K graph along an axis: for each entity the `k_top` highest
/// positive correlations, sorted descending, ties broken by lower id.
pub fn build_topk(
    store: &RatingStore,
    axis: Axis,
    k_top: usize,
    min_overlap: usize,
) -> NeighborGraph {
    let rows = store.rows(axis);
    let n = rows.len();
    let mut lists: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            if let Some(c) = pearson_rows(&rows[a], &rows[b], min_overlap) {
                if c > 0.0 {
                    lists[a].push((b as u32, c));
                    lists[b].push((a as u32, c));
                }
            }
        }
    }
    for list in lists.iter_mut() {
        list.sort_unstable_by(|x, y| {
            y.1.partial_cmp(&x.1)
                .expect("correlations are finite")
                .then(x.0.cmp(&y.0))
        });
        list.truncate(k_top);
    }
    NeighborGraph {
        axis,
        k_top,
        min_overlap,
        neighbors: lists,
    }
}

impl NeighborGraph {
    pub fn n_entities(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors_of(&self, id: u32) -> &[(u32, f64)] {
        &self.neighbors[id as usize]
    }

    /// All undirected pairs present in the graph (union over both
    /// directions), canonicalized as (low, high) and sorted.
    pub fn undirected_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (a, list) in self.neighbors.iter().enumerate() {
            for &(b, _) in list {
                let (lo, hi) = if (a as u32) < b {
                    (a as u32, b)
                } else {
                    (b, a as u32)
                };
                pairs.push((lo, hi));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// CSV export `axis,id,neighbor,corr`. Correlations use Rust's
    /// shortest-round-trip float formatting so a reload is bit-exact.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"axis,id,neighbor,corr\n")?;
        for (id, list) in self.neighbors.iter().enumerate() {
            for &(nb, c) in list {
                writeln!(w, "{},{},{},{}", self.axis.name(), id, nb, c)?;
            }
        }
        Ok(())
    }

    /// Parse a graph previously written by `write_csv`.
    pub fn read_csv(
        reader: impl BufRead,
        axis: Axis,
        k_top: usize,
        min_overlap: usize,
        n_entities: usize,
    ) -> Result<Self> {
        let mut neighbors: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_entities];
        for (no, line) in reader.lines().enumerate() {
            let line = line?;
            if no == 0 {
                if line.trim() != "axis,id,neighbor,corr" {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "bad neighbour csv header".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 || parts[0] != axis.name() {
                return Err(Error::Parse {
                    line: no + 1,
                    msg: "bad neighbour csv row".into(),
                });
            }
            let id: usize = parts[1].parse().map_err(|_| Error::Parse {
                line: no + 1,
                msg: "bad id".into(),
            })?;
            let nb: u32 = parts[2].parse().map_err(|_| Error::Parse {
                line: no + 1,
                msg: "bad neighbor id".into(),
            })?;
            let c: f64 = parts[3].parse().map_err(|_| Error::Parse {
                line: no + 1,
                msg: "bad correlation".into(),
            })?;
            if id >= n_entities {
                return Err(Error::Index(format!("neighbour id {id} out of range")));
            }
            neighbors[id].push((nb, c));
        }
        Ok(Self {
            axis,
            k_top,
            min_overlap,
            neighbors,
        })
    }

    /// Cache file name keyed by dataset hash and build parameters.
    pub fn cache_file_name(
        dataset_hash: u64,
        axis: Axis,
        k_top: usize,
        min_overlap: usize,
    ) -> String {
        format!(
            "neighbors_{}_k{}_ov{}_{:016x}.csv",
            axis.name(),
            k_top,
            min_overlap,
            dataset_hash
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RatingScale, RatingStore, RatingTriple};

    fn store_from(triples: &[(u32, u32, u8)], n_users: u32, n_items: u32) -> RatingStore {
        let ts: Vec<RatingTriple> = triples
            .iter()
            .map(|&(user, item, level)| RatingTriple { user, item, level })
            .collect();
        RatingStore::from_triples(
            RatingScale::five_star(),
            (0..n_users).map(|u| u.to_string()).collect(),
            (0..n_items).map(|i| i.to_string()).collect(),
            &ts,
        )
        .unwrap()
    }

    #[test]
    fn identical_raters_correlate_perfectly() {
        let mut triples = Vec::new();
        for i in 0..5u32 {
            let level = (i % 4 + 1) as u8; // non-constant
            triples.push((0, i, level));
            triples.push((1, i, level));
        }
        let store = store_from(&triples, 2, 5);
        let c = pearson(&store, Axis::User, 0, 1, 2).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_raters_anti_correlate() {
        let triples = vec![
            (0, 0, 1),
            (0, 1, 2),
            (0, 2, 3),
            (1, 0, 3),
            (1, 1, 2),
            (1, 2, 1),
        ];
        let store = store_from(&triples, 2, 3);
        let c = pearson(&store, Axis::User, 0, 1, 2).unwrap();
        assert!((c + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        // u = (1,2,3,4), v = (2,2,3,5) on 4 shared items
        let triples = vec![
            (0, 0, 1),
            (0, 1, 2),
            (0, 2, 3),
            (0, 3, 4),
            (1, 0, 2),
            (1, 1, 2),
            (1, 2, 3),
            (1, 3, 5),
        ];
        let store = store_from(&triples, 2, 4);
        let c = pearson(&store, Axis::User, 0, 1, 2).unwrap();
        // independent oracle: r = (nΣxy − ΣxΣy)/√((nΣx²−(Σx)²)(nΣy²−(Σy)²))
        let (xs, ys) = (vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 2.0, 3.0, 5.0]);
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let syy: f64 = ys.iter().map(|y| y * y).sum();
        let oracle =
            (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((c - oracle).abs() < 1e-12);
        assert!((c - 0.912_870_929_175_277).abs() < 1e-9);
    }

    #[test]
    fn low_overlap_and_zero_variance_are_absent() {
        let triples = vec![(0, 0, 1), (0, 1, 2), (1, 0, 3), (1, 1, 4), (1, 2, 5)];
        let store = store_from(&triples, 2, 3);
        assert!(pearson(&store, Axis::User, 0, 1, 3).is_none()); // overlap 2 < 3
        let flat = vec![
            (0, 0, 3),
            (0, 1, 3),
            (0, 2, 3),
            (1, 0, 1),
            (1, 1, 2),
            (1, 2, 5),
        ];
        let store = store_from(&flat, 2, 3);
        assert!(pearson(&store, Axis::User, 0, 1, 2).is_none()); // zero variance side
    }

    #[test]
    fn pearson_is_symmetric() {
        let triples: Vec<(u32, u32, u8)> = (0..4)
            .flat_map(|u| (0..6).map(move |i| (u, i, ((3 * u + i) % 5 + 1) as u8)))
            .collect();
        let store = store_from(&triples, 4, 6);
        for a in 0..4u32 {
            for b in 0..4u32 {
                if a == b {
                    continue;
                }
                let ab = pearson(&store, Axis::User, a, b, 2);
                let ba = pearson(&store, Axis::User, b, a, 2);
                match (ab, ba) {
                    (Some(x), Some(y)) => {
                        assert!((x - y).abs() < 1e-12);
                        assert!(x.abs() <= 1.0 + 1e-12);
                    }
                    (None, None) => {}
                    other => panic!("asymmetric absence: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn topk_keeps_single_best() {
        // user 1 mirrors user 0 exactly; user 2 is anti-correlated
        let triples = vec![
            (0, 0, 1),
            (0, 1, 3),
            (0, 2, 5),
            (1, 0, 1),
            (1, 1, 3),
            (1, 2, 5),
            (2, 0, 5),
            (2, 1, 3),
            (2, 2, 1),
        ];
        let store = store_from(&triples, 3, 3);
        let graph = build_topk(&store, Axis::User, 1, 2);
        assert_eq!(graph.neighbors_of(0).len(), 1);
        assert_eq!(graph.neighbors_of(0)[0].0, 1);
    }

    #[test]
    fn all_negative_yields_empty_lists() {
        let triples = vec![
            (0, 0, 1),
            (0, 1, 3),
            (0, 2, 5),
            (1, 0, 5),
            (1, 1, 3),
            (1, 2, 1),
        ];
        let store = store_from(&triples, 2, 3);
        let graph = build_topk(&store, Axis::User, 5, 2);
        assert!(graph.neighbors_of(0).is_empty());
        assert!(graph.neighbors_of(1).is_empty());
    }

    #[test]
    fn topk_matches_all_pairs_oracle() {
        // deterministic pseudo-random 10-user store
        let mut triples = Vec::new();
        let mut x = 12345u64;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 33) as u32
        };
        for u in 0..10u32 {
            for i in 0..8u32 {
                if next() % 4 != 0 {
                    triples.push((u, i, (next() % 5 + 1) as u8));
                }
            }
        }
        let store = store_from(&triples, 10, 8);
        let graph = build_topk(&store, Axis::User, 3, 2);
        for a in 0..10u32 {
            // oracle: rank all positive correlations by (corr desc, id asc)
            let mut all: Vec<(u32, f64)> = (0..10u32)
                .filter(|&b| b != a)
                .filter_map(|b| pearson(&store, Axis::User, a, b, 2).map(|c| (b, c)))
                .filter(|&(_, c)| c > 0.0)
                .collect();
            all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            all.truncate(3);
            assert_eq!(graph.neighbors_of(a), all.as_slice(), "user {a}");
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let triples: Vec<(u32, u32, u8)> = (0..6)
            .flat_map(|u| (0..7).map(move |i| (u, i, ((u * 2 + i) % 5 + 1) as u8)))
            .collect();
        let store = store_from(&triples, 6, 7);
        let graph = build_topk(&store, Axis::Item, 4, 2);
        let mut buf = Vec::new();
        graph.write_csv(&mut buf).unwrap();
        let reloaded = NeighborGraph::read_csv(
            std::io::Cursor::new(&buf),
            Axis::Item,
            4,
            2,
            store.n_items(),
        )
        .unwrap();
        assert_eq!(graph, reloaded);
    }
}
