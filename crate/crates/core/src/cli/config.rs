use std::path::Path;

use serde::Deserialize;

use crate::data::{GridConfig, TgBand, DEFAULT_CANDIDATE_CAP, DEFAULT_MAX_SUM, DEFAULT_MIN_SUM};
use crate::error::{Error, Result};
use crate::knn::KnnConfig;
use crate::model::ArchConfig;
use crate::train::TrainConfig;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_RANK_K: usize = 50;
pub const DEFAULT_TOP_K: usize = 5;

/// Flat JSON run configuration. Every key is optional; unknown keys are
/// rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,

    pub d: Option<usize>,
    pub f: Option<usize>,
    pub dk: Option<usize>,
    pub h: Option<usize>,
    pub k: Option<usize>,

    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub sigma: Option<f64>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub eval_every: Option<usize>,
    pub eval_k: Option<usize>,

    pub train_fraction: Option<f64>,
    pub min_sum: Option<f64>,
    pub max_sum: Option<f64>,
    /// `"LOW:HIGH"` in °C.
    pub band: Option<String>,

    pub knn_neighbors: Option<usize>,
    pub rank_k: Option<usize>,
    pub top_k: Option<usize>,

    pub step: Option<f64>,
    pub max_nonzero: Option<usize>,
    pub cap: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d", self.d), ("f", self.f), ("dk", self.dk), ("h", self.h), ("k", self.k)] {
            if v == Some(0) {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        self.train_config().validate()?;
        let frac = self.train_fraction();
        if !(frac > 0.0 && frac < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {frac}")));
        }
        self.sum_bounds()?;
        self.band()?;
        for (name, v) in [
            ("knn_neighbors", self.knn_neighbors),
            ("rank_k", self.rank_k),
            ("top_k", self.top_k),
            ("max_nonzero", self.max_nonzero),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        if let Some(step) = self.step {
            if !(step > 0.0 && step <= 1.0) {
                return Err(Error::Config(format!("step must lie in (0, 1], got {step}")));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn arch(&self, n: usize) -> ArchConfig {
        let base = ArchConfig::with_defaults(n);
        ArchConfig {
            n,
            d: self.d.unwrap_or(base.d),
            f: self.f.unwrap_or(base.f),
            dk: self.dk.unwrap_or(base.dk),
            h: self.h.unwrap_or(base.h),
            k: self.k.unwrap_or(base.k),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            sigma: self.sigma.unwrap_or(base.sigma),
            seed: self.seed(),
            lr: self.lr.unwrap_or(base.lr),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.eps.unwrap_or(base.eps),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            dropout: self.dropout.unwrap_or(base.dropout),
            eval_every: self.eval_every.unwrap_or(base.eval_every),
            eval_k: self.eval_k.unwrap_or(base.eval_k),
        }
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION)
    }

    pub fn sum_bounds(&self) -> Result<(f64, f64)> {
        let lo = self.min_sum.unwrap_or(DEFAULT_MIN_SUM);
        let hi = self.max_sum.unwrap_or(DEFAULT_MAX_SUM);
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("sum bounds [{lo}, {hi}] are invalid")));
        }
        Ok((lo, hi))
    }

    pub fn band(&self) -> Result<Option<TgBand>> {
        self.band.as_deref().map(str::parse).transpose()
    }

    pub fn knn(&self) -> KnnConfig {
        KnnConfig {
            k_neighbors: self.knn_neighbors.unwrap_or(KnnConfig::default().k_neighbors),
        }
    }

    pub fn rank_k(&self) -> usize {
        self.rank_k.unwrap_or(DEFAULT_RANK_K)
    }

    pub fn top_k(&self) -> usize {
        self.top_k.unwrap_or(DEFAULT_TOP_K)
    }

    /// Grid for `n` components; `max_nonzero` defaults to `n`.
    pub fn grid(&self, n: usize) -> Result<GridConfig> {
        let step = self
            .step
            .ok_or_else(|| Error::Config("a grid step is required (--step or `step`)".into()))?;
        Ok(GridConfig {
            step,
            max_nonzero: self.max_nonzero.unwrap_or(n),
            bounds: None,
            cap: self.cap.unwrap_or(DEFAULT_CANDIDATE_CAP),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg.seed(), 42);
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.arch(8), ArchConfig::with_defaults(8));
        assert_eq!(cfg.sum_bounds().unwrap(), (0.95, 1.05));
        assert_eq!(cfg.knn().k_neighbors, 5);
        assert!(cfg.band().unwrap().is_none());
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse(r#"{"epochs": 3, "d": 4, "band": "500:600", "seed": 7, "lr": 0.01}"#).unwrap();
        assert_eq!(cfg.train_config().epochs, 3);
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.train_config().lr, 0.01);
        assert_eq!(cfg.arch(5).d, 4);
        assert_eq!(cfg.band().unwrap(), Some(TgBand::new(500.0, 600.0).unwrap()));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(parse(r#"{"epoch": 3}"#).is_err());
        assert!(parse(r#"{"epochs": 0}"#).is_err());
        assert!(parse(r#"{"batch_size": 1}"#).is_err());
        assert!(parse(r#"{"band": "600:500"}"#).is_err());
        assert!(parse(r#"{"train_fraction": 1.0}"#).is_err());
        assert!(parse(r#"{"dk": 0}"#).is_err());
        assert!(parse(r#"{"min_sum": 1.1, "max_sum": 1.0}"#).is_err());
    }
}
