//! Dataset handling: cleaning, band labeling, splitting, Z-score
//! normalization, multiplicative noise augmentation and triplet sampling.
//!
//! Compositions are plain `Vec<f64>` of mass fractions in schema order.

mod csv_io;
mod grid;

pub use csv_io::{load_compositions, load_dataset, load_table, write_compositions, write_dataset};
pub use grid::{count_candidates, enumerate_candidates, GridConfig, DEFAULT_CANDIDATE_CAP};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numeric::{gaussian, SeededRng};

pub type Composition = Vec<f64>;

/// Default lower bound on the fraction sum kept by [`clean`].
pub const DEFAULT_MIN_SUM: f64 = 0.95;
/// Default upper bound on the fraction sum kept by [`clean`].
pub const DEFAULT_MAX_SUM: f64 = 1.05;
pub const DEFAULT_SIGMA: f64 = 0.01;

/// Column name of the glass transition temperature in data tables.
pub const TG_COLUMN: &str = "Tg";

/// Standard deviations below this are treated as a constant column.
const CONSTANT_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSchema {
    names: Vec<String>,
}

impl ComponentSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "a schema needs at least 2 components, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(Error::Config("component names must be non-empty".into()));
            }
            if name == TG_COLUMN {
                return Err(Error::Config(format!("`{TG_COLUMN}` is reserved for the label column")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate component name `{name}`")));
            }
        }
        Ok(Self { names })
    }

    /// Schema with generated names `x1..xn`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| format!("x{i}")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub fractions: Composition,
    pub tg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub fractions: Composition,
    /// `true` when the Tg lies inside the target band.
    pub y: bool,
    pub tg: f64,
}

/// Half-open Tg interval `[low, high)` in °C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgBand {
    low: f64,
    high: f64,
}

impl TgBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(Error::Config(format!("invalid Tg band [{low}, {high})")));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn contains(&self, tg: f64) -> bool {
        self.low <= tg && tg < self.high
    }
}

impl std::str::FromStr for TgBand {
    type Err = Error;

    /// Parses `low:high`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("band `{s}` must look like LOW:HIGH")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("band bound `{v}` is not a number")))
        };
        TgBand::new(parse(lo)?, parse(hi)?)
    }
}

impl std::fmt::Display for TgBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Composition> {
        if x.len() != self.n() {
            return Err(Error::shape("normalize", self.n(), x.len()));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn denormalize(&self, x: &[f64]) -> Result<Composition> {
        if x.len() != self.n() {
            return Err(Error::shape("denormalize", self.n(), x.len()));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub sigma: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor: &'a LabeledSample,
    pub positive: &'a LabeledSample,
    pub negative: &'a LabeledSample,
}

/// Row counts from a cleaning pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanSummary {
    pub read: usize,
    pub kept: usize,
    pub dropped_sum: usize,
    pub dropped_missing_tg: usize,
    pub dropped_invalid: usize,
}

pub fn clean(raw: &[RawSample], min_sum: f64, max_sum: f64) -> Vec<RawSample> {
    clean_with_summary(raw, min_sum, max_sum).0
}

/// Keeps samples that have a Tg, only finite non-negative fractions, and a
/// fraction sum in `[min_sum, max_sum]`. Order is preserved.
pub fn clean_with_summary(
    raw: &[RawSample],
    min_sum: f64,
    max_sum: f64,
) -> (Vec<RawSample>, CleanSummary) {
    let mut summary = CleanSummary {
        read: raw.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for s in raw {
        if s.fractions.iter().any(|v| !v.is_finite() || *v < 0.0) {
            summary.dropped_invalid += 1;
            continue;
        }
        let sum: f64 = s.fractions.iter().sum();
        if !(min_sum..=max_sum).contains(&sum) {
            summary.dropped_sum += 1;
            continue;
        }
        match s.tg {
            Some(tg) if tg.is_finite() => kept.push(s.clone()),
            _ => summary.dropped_missing_tg += 1,
        }
    }
    summary.kept = kept.len();
    (kept, summary)
}

/// Assigns `y = band.contains(tg)`. Samples without a Tg are skipped.
pub fn transform_labels(cleaned: &[RawSample], band: TgBand) -> Vec<LabeledSample> {
    cleaned
        .iter()
        .filter_map(|s| {
            s.tg.map(|tg| LabeledSample {
                fractions: s.fractions.clone(),
                y: band.contains(tg),
                tg,
            })
        })
        .collect()
}

/// Training-side size of a split: `⌈N·fraction⌉`.
pub fn train_size(total: usize, train_fraction: f64) -> usize {
    // the small offset keeps exact products such as 10 × 0.8 from rounding up
    ((total as f64 * train_fraction - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Seeded shuffle-and-cut split into (train, validation).
pub fn split(
    samples: &[LabeledSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let cut = train_size(samples.len(), train_fraction);
    let train = order[..cut].iter().map(|&i| samples[i].clone()).collect();
    let val = order[cut..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

/// Per-component mean and population standard deviation.
pub fn fit_normalization(train: &[LabeledSample]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Data("cannot fit normalization on an empty set".into()))?;
    let n = first.fractions.len();
    if let Some(bad) = train.iter().find(|s| s.fractions.len() != n) {
        return Err(Error::shape("fit_normalization", n, bad.fractions.len()));
    }
    let count = train.len() as f64;
    let mut mean = vec![0.0; n];
    for s in train {
        for (m, v) in mean.iter_mut().zip(&s.fractions) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; n];
    for s in train {
        for i in 0..n {
            let d = s.fractions[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / count).sqrt();
            if s < CONSTANT_STD {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(NormalizationStats { mean, std })
}

pub fn normalize(x: &[f64], stats: &NormalizationStats) -> Result<Composition> {
    stats.normalize(x)
}

/// Multiplies every fraction by an independent `1 + ε`, `ε ~ N(0, sigma)`.
pub fn augment(x: &[f64], cfg: &AugmentationConfig, rng: &mut SeededRng) -> Composition {
    x.iter()
        .map(|v| v * (1.0 + gaussian(rng, 0.0, cfg.sigma)))
        .collect()
}

/// Precomputed class membership for repeated triplet draws.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    samples: &'a [LabeledSample],
    /// `members[label]` lists sample indices of that class.
    members: [Vec<usize>; 2],
    /// Position of each sample inside its class list.
    position: Vec<usize>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(samples: &'a [LabeledSample]) -> Result<Self> {
        let mut members = [Vec::new(), Vec::new()];
        let mut position = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let class = &mut members[s.y as usize];
            position.push(class.len());
            class.push(i);
        }
        for label in [0u8, 1] {
            if members[label as usize].is_empty() {
                return Err(Error::EmptyClass { label });
            }
        }
        Ok(Self {
            samples,
            members,
            position,
        })
    }

    pub fn class_size(&self, y: bool) -> usize {
        self.members[y as usize].len()
    }

    /// Draws a uniform positive (never the anchor itself) and a uniform
    /// negative for `anchor_index`.
    pub fn sample(&self, anchor_index: usize, rng: &mut SeededRng) -> Result<Triplet<'a>> {
        let anchor = self.samples.get(anchor_index).ok_or_else(|| {
            Error::Data(format!(
                "anchor index {anchor_index} out of range for {} samples",
                self.samples.len()
            ))
        })?;
        let same = &self.members[anchor.y as usize];
        let other = &self.members[!anchor.y as usize];
        if same.len() < 2 {
            return Err(Error::EmptyClass { label: anchor.y as u8 });
        }
        // Draw from the class list with the anchor's slot removed.
        let mut p = rng.below(same.len() - 1);
        if p >= self.position[anchor_index] {
            p += 1;
        }
        let q = rng.below(other.len());
        Ok(Triplet {
            anchor,
            positive: &self.samples[same[p]],
            negative: &self.samples[other[q]],
        })
    }
}

pub fn sample_triplet<'a>(
    train: &'a [LabeledSample],
    anchor_index: usize,
    rng: &mut SeededRng,
) -> Result<Triplet<'a>> {
    TripletSampler::new(train)?.sample(anchor_index, rng)
}
