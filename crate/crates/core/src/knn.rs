//! K-nearest-neighbors baseline over normalized fractions.

use crate::data::{LabeledSample, NormalizationStats};
use crate::error::{Error, Result};
use crate::eval::{report_from_scores, Report, ScoreRecord};

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k_neighbors: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_NEIGHBORS,
        }
    }
}

/// Normalized training points, built once and reused across queries.
pub struct KnnIndex {
    points: Vec<Vec<f64>>,
    labels: Vec<bool>,
    k: usize,
}

impl KnnIndex {
    pub fn new(train: &[LabeledSample], stats: &NormalizationStats, cfg: KnnConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("KNN needs a non-empty training set".into()));
        }
        if cfg.k_neighbors == 0 || cfg.k_neighbors > train.len() {
            return Err(Error::Config(format!(
                "k_neighbors = {} must lie in 1..={}",
                cfg.k_neighbors,
                train.len()
            )));
        }
        let points = train
            .iter()
            .map(|s| stats.normalize(&s.fractions))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            labels: train.iter().map(|s| s.y).collect(),
            k: cfg.k_neighbors,
        })
    }

    /// Target fraction among the `k` nearest training points.
    pub fn score(&self, query: &[f64], stats: &NormalizationStats) -> Result<f64> {
        let q = stats.normalize(query)?;
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_distance);
            dist.truncate(self.k);
        }
        let hits = dist.iter().filter(|(_, i)| self.labels[*i]).count();
        Ok(hits as f64 / self.k as f64)
    }
}

pub fn knn_score(train: &[LabeledSample], stats: &NormalizationStats, query: &[f64], cfg: KnnConfig) -> Result<f64> {
    KnnIndex::new(train, stats, cfg)?.score(query, stats)
}

/// Scores every validation sample and reports the same metrics as the
/// encoder.
pub fn knn_evaluate(
    train: &[LabeledSample],
    val: &[LabeledSample],
    stats: &NormalizationStats,
    cfg: KnnConfig,
    k_rank: usize,
) -> Result<Report> {
    let index = KnnIndex::new(train, stats, cfg)?;
    let scores = val
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(ScoreRecord {
                index: i,
                score: index.score(&s.fractions, stats)?,
                y: s.y,
                tg: s.tg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report_from_scores(scores, k_rank)
}
