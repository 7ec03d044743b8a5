//! Rating feature maps: categorical indicators, ordinal distance encodings
//! and Gaussian-normalized values, for both single ratings and rating pairs.

use crate::corpus::{RatingScale, RatingStore};
use crate::error::{Error, Result};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Categorical,
    Ordinal,
    Gaussian,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Categorical => "categorical",
            SchemeKind::Ordinal => "ordinal",
            SchemeKind::Gaussian => "gaussian",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(SchemeKind::Categorical),
            "ordinal" => Ok(SchemeKind::Ordinal),
            "gaussian" => Ok(SchemeKind::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme '{other}' (expected categorical, ordinal or gaussian)"
            ))),
        }
    }
}

/// Global affine normalizer mapping integer levels to zero-mean,
/// unit-variance values, with an inverse for prediction read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNormalizer {
    mean: f64,
    std: f64,
}

impl GaussianNormalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::DegenerateData(format!(
                "normalizer needs finite mean and positive std, got ({mean}, {std})"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Population mean and std of all level indices in the store.
    pub fn fit(store: &RatingStore) -> Result<Self> {
        if store.n_ratings() == 0 {
            return Err(Error::DegenerateData("empty store".into()));
        }
        let n = store.n_ratings() as f64;
        let mean = store.triples().map(|t| t.level as f64).sum::<f64>() / n;
        let var = store
            .triples()
            .map(|t| {
                let d = t.level as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        if var <= 0.0 {
            return Err(Error::DegenerateData(
                "all ratings identical: zero variance".into(),
            ));
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn transform(&self, level: u8) -> f64 {
        (level as f64 - self.mean) / self.std
    }

    /// Undo the normalization and clamp to the valid level range.
    pub fn inverse(&self, x: f64, n_levels: usize) -> f64 {
        (self.mean + x * self.std).clamp(1.0, n_levels as f64)
    }
}

/// One of the three rating parameterisations, together with the scale it
/// applies to. Determines the unary feature width `A` and pair width `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScheme {
    kind: SchemeKind,
    scale: RatingScale,
    normalizer: Option<GaussianNormalizer>,
}

impl FeatureScheme {
    pub fn categorical(scale: RatingScale) -> Self {
        Self {
            kind: SchemeKind::Categorical,
            scale,
            normalizer: None,
        }
    }

    pub fn ordinal(scale: RatingScale) -> Self {
        Self {
            kind: SchemeKind::Ordinal,
            scale,
            normalizer: None,
        }
    }

    pub fn gaussian(scale: RatingScale, normalizer: GaussianNormalizer) -> Self {
        Self {
            kind: SchemeKind::Gaussian,
            scale,
            normalizer: Some(normalizer),
        }
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn normalizer(&self) -> Option<&GaussianNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn n_levels(&self) -> usize {
        self.scale.n_levels()
    }

    /// Unary feature count A: n for categorical, 2n for ordinal
    /// (down block then up block), 1 for Gaussian.
    pub fn unary_len(&self) -> usize {
        let n = self.n_levels();
        match self.kind {
            SchemeKind::Categorical => n,
            SchemeKind::Ordinal => 2 * n,
            SchemeKind::Gaussian => 1,
        }
    }

    /// Pairwise feature count B (1 for all three schemes).
    pub fn pair_len(&self) -> usize {
        1
    }

    fn check_level(&self, level: u8) -> Result<()> {
        if self.scale.contains_level(level) {
            Ok(())
        } else {
            Err(Error::RatingRange {
                line: 0,
                value: level.to_string(),
                n_levels: self.n_levels(),
            })
        }
    }

    /// Normalized value of a level under the Gaussian scheme.
    pub fn normalized_value(&self, level: u8) -> f64 {
        self.normalizer
            .as_ref()
            .expect("gaussian scheme carries a normalizer")
            .transform(level)
    }

    pub fn unary(&self, level: u8) -> Result<Vec<f64>> {
        self.check_level(level)?;
        let mut out = vec![0.0; self.unary_len()];
        self.unary_into(level, &mut out);
        Ok(out)
    }

    /// Fill `out` (length `unary_len`) with the unary features of `level`.
    /// Levels must already be validated.
    pub fn unary_into(&self, level: u8, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.unary_len());
        let n = self.n_levels();
        let s = level as i64;
        match self.kind {
            SchemeKind::Categorical => {
                out.fill(0.0);
                out[(s - 1) as usize] = 1.0;
            }
            SchemeKind::Ordinal => {
                // down block: (s' - s) for s' < s; up block: (s'' - s) for s'' > s
                for sp in 1..=n as i64 {
                    out[(sp - 1) as usize] = if sp < s { (sp - s) as f64 } else { 0.0 };
                    out[(n as i64 + sp - 1) as usize] =
                        if sp > s { (sp - s) as f64 } else { 0.0 };
                }
            }
            SchemeKind::Gaussian => {
                out[0] = self.normalized_value(level);
            }
        }
    }

    pub fn pair(&self, s: u8, t: u8) -> Result<Vec<f64>> {
        self.check_level(s)?;
        self.check_level(t)?;
        Ok(vec![self.pair_scalar(s, t)])
    }

    /// The single pairwise feature (B = 1): match indicator, absolute level
    /// distance, or product of normalized values.
    pub fn pair_scalar(&self, s: u8, t: u8) -> f64 {
        match self.kind {
            SchemeKind::Categorical => {
                if s == t {
                    1.0
                } else {
                    0.0
                }
            }
            SchemeKind::Ordinal => (s as i64 - t as i64).abs() as f64,
            SchemeKind::Gaussian => self.normalized_value(s) * self.normalized_value(t),
        }
    }

    /// Precomputed per-level feature tables for hot loops.
    pub fn tables(&self) -> LevelTables {
        let n = self.n_levels();
        let unary: Vec<Vec<f64>> = (1..=n as u8)
            .map(|s| {
                let mut v = vec![0.0; self.unary_len()];
                self.unary_into(s, &mut v);
                v
            })
            .collect();
        let mut pair = vec![0.0; n * n];
        for s in 1..=n as u8 {
            for t in 1..=n as u8 {
                pair[(s as usize - 1) * n + (t as usize - 1)] = self.pair_scalar(s, t);
            }
        }
        LevelTables { n, unary, pair }
    }
}

/// Feature values indexed by level, built once per training or inference
/// pass. `unary[s-1]` is the A-vector of level s; `pair_at(s, t)` the
/// single pairwise feature.
#[derive(Debug, Clone)]
pub struct LevelTables {
    n: usize,
    pub unary: Vec<Vec<f64>>,
    pair: Vec<f64>,
}

impl LevelTables {
    pub fn n_levels(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn unary_at(&self, level: u8) -> &[f64] {
        &self.unary[(level - 1) as usize]
    }

    #[inline]
    pub fn pair_at(&self, s: u8, t: u8) -> f64 {
        self.pair[(s as usize - 1) * self.n + (t as usize - 1)]
    }
}
