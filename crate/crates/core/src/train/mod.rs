//! Triplet contrastive training: loss, hand-written gradients, Adam and the
//! epoch loop.
//!
//! Each epoch visits every training sample once as an anchor, in shuffled
//! order. Every anchor gets a fresh positive and negative, all three are
//! augmented, normalized and pushed through the encoder in train mode. A
//! mini-batch lays its triplets out as consecutive
//! `(anchor, positive, negative)` rows and shares one set of batch-norm
//! statistics.

mod adam;
mod backward;
mod loss;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, triplet_batch_loss, triplet_feature_grads, triplet_loss_and_grads, Gradients};
pub use loss::{contrastive_loss, loss_from_similarities, loss_similarity_grads};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::data::{
    augment, fit_normalization, AugmentationConfig, LabeledSample, NormalizationStats, TripletSampler,
    DEFAULT_SIGMA,
};
use crate::error::{Error, Result};
use crate::eval::{class_center, evaluate, ClassCenter};
use crate::fsutil::write_atomic;
use crate::model::{forward_batch_train, init_params, ArchConfig, ModelParams};
use crate::numeric::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Std of the multiplicative augmentation noise.
    pub sigma: f64,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Inverted-dropout rate after the projection-head ReLU.
    pub dropout: f64,
    /// Validate every this many epochs; epoch 1 and the last epoch are
    /// always validated.
    pub eval_every: usize,
    /// Rank cutoff for validation Precision@k.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            sigma: DEFAULT_SIGMA,
            seed: 42,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            dropout: 0.0,
            eval_every: 1,
            eval_k: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be a non-negative number, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("eval_k must be at least 1".into()));
        }
        Ok(())
    }

    fn evaluates(&self, epoch: usize) -> bool {
        epoch == 1 || epoch == self.epochs || epoch.is_multiple_of(self.eval_every)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
    pub val_precision_at_k: Option<f64>,
    /// Seconds since training started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .filter(|r| r.val_auc.is_some())
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_auc >= r.val_auc => Some(b),
                _ => Some(r),
            })
    }

    /// Trailing moving average of the epoch losses over `window` epochs.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.records.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let span = &self.records[lo..=i];
                span.iter().map(|r| r.mean_loss).sum::<f64>() / span.len() as f64
            })
            .collect()
    }

    /// CSV with columns `epoch, mean_loss, val_auc, val_precision_at_k`;
    /// epochs without validation leave the last two empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        write_atomic(path, |w: &mut dyn Write| {
            let mut wr = csv::Writer::from_writer(w);
            let err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
            wr.write_record(["epoch", "mean_loss", "val_auc", "val_precision_at_k"]).map_err(err)?;
            for r in &self.records {
                wr.write_record([
                    r.epoch.to_string(),
                    r.mean_loss.to_string(),
                    opt(r.val_auc),
                    opt(r.val_precision_at_k),
                ])
                .map_err(err)?;
            }
            wr.flush().map_err(|e| Error::io(path, e))
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation AUC (the final
    /// epoch if validation never ran).
    pub params: ModelParams,
    pub stats: NormalizationStats,
    /// Center of the training targets under `params`.
    pub center: ClassCenter,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

fn both_classes(samples: &[LabeledSample]) -> bool {
    samples.iter().any(|s| s.y) && samples.iter().any(|s| !s.y)
}

/// Trains an encoder from scratch and keeps the best-on-validation weights.
pub fn train(
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.fractions.len() != arch.n) {
        return Err(Error::shape("train", arch.n, s.fractions.len()));
    }
    let sampler = TripletSampler::new(train_set)?;
    for y in [false, true] {
        if sampler.class_size(y) < 2 {
            return Err(Error::Data(format!(
                "class {} has {} training sample(s); positives need at least 2",
                y as u8,
                sampler.class_size(y)
            )));
        }
    }
    let validate = both_classes(val_set);
    if !validate {
        log::warn!("validation set lacks one class; skipping validation and keeping the final epoch");
    }

    let stats = fit_normalization(train_set)?;
    let targets: Vec<LabeledSample> = train_set.iter().filter(|s| s.y).cloned().collect();
    let mut params = init_params(arch, cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)?;
    let mut rng = SeededRng::new(cfg.seed).fork();
    let aug = AugmentationConfig { sigma: cfg.sigma };
    let eval_k = cfg.eval_k.min(val_set.len().max(1));

    let start = Instant::now();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Vec::with_capacity(3 * chunk.len());
            for &i in chunk {
                let t = sampler.sample(i, &mut rng)?;
                for s in [t.anchor, t.positive, t.negative] {
                    xs.push(stats.normalize(&augment(&s.fractions, &aug, &mut rng))?);
                }
            }
            let trace = forward_batch_train(&xs, &mut params, cfg.dropout, &mut rng)?;
            let (loss, grads) = triplet_loss_and_grads(&trace, &params)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let mean_loss = loss_sum / train_set.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("mean training loss at epoch {epoch}")));
        }

        let (mut val_auc, mut val_p) = (None, None);
        if validate && cfg.evaluates(epoch) {
            let center = class_center(&targets, &params, &stats)?;
            let report = evaluate(val_set, &params, &stats, &center, eval_k)?;
            val_auc = Some(report.auc);
            val_p = Some(report.precision_at_k);
            if best.as_ref().is_none_or(|(auc, _, _)| report.auc > *auc) {
                best = Some((report.auc, epoch, params.clone()));
            }
        }
        log::info!(
            "epoch {epoch}/{}: loss {mean_loss:.5}{}",
            cfg.epochs,
            match (val_auc, val_p) {
                (Some(a), Some(p)) => format!(", val AUC {a:.4}, P@{eval_k} {p:.3}"),
                _ => String::new(),
            }
        );
        history.records.push(EpochRecord {
            epoch,
            mean_loss,
            val_auc,
            val_precision_at_k: val_p,
            elapsed: start.elapsed().as_secs_f64(),
        });
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, cfg.epochs),
    };
    let center = class_center(&targets, &params, &stats)?;
    Ok(TrainOutcome {
        params,
        stats,
        center,
        history,
        best_epoch,
    })
}
