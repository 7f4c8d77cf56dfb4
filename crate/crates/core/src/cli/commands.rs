use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use crate::data::{
    clean_with_summary, count_candidates, enumerate_candidates, load_compositions, load_dataset, load_table, split,
    transform_labels, write_compositions, write_dataset, CleanSummary, ComponentSchema, Composition, GridConfig,
    LabeledSample, RawSample, TgBand,
};
use crate::error::{Error, Result};
use crate::eval::{class_center, evaluate, features, write_report};
use crate::fsutil::write_atomic;
use crate::knn::knn_evaluate;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, SplitInfo};
use crate::numeric::dot;
use crate::train::train;

pub fn cmd_clean(input: &Path, output: &Path, min_sum: f64, max_sum: f64) -> Result<CleanSummary> {
    if !(min_sum <= max_sum) {
        return Err(Error::Config(format!("min_sum {min_sum} exceeds max_sum {max_sum}")));
    }
    let (schema, raw) = load_table(input)?;
    let (kept, summary) = clean_with_summary(&raw, min_sum, max_sum);
    write_dataset(output, &schema, &kept)?;
    log::info!(
        "read {}, kept {}, dropped by sum {}, dropped missing Tg {}, dropped invalid {}",
        summary.read,
        summary.kept,
        summary.dropped_sum,
        summary.dropped_missing_tg,
        summary.dropped_invalid
    );
    Ok(summary)
}

/// Cleans, labels and splits rows exactly as training did.
fn partition(
    raw: &[RawSample],
    band: TgBand,
    split_info: &SplitInfo,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let (kept, summary) = clean_with_summary(raw, split_info.min_sum, split_info.max_sum);
    log::info!("kept {} of {} rows after cleaning", summary.kept, summary.read);
    let labeled = transform_labels(&kept, band);
    let targets = labeled.iter().filter(|s| s.y).count();
    log::info!("band {band}: {targets} target and {} non-target samples", labeled.len() - targets);
    split(&labeled, split_info.train_fraction, split_info.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_auc: Option<f64>,
    pub fingerprint: String,
}

pub fn cmd_train(data: &Path, cfg: &RunConfig, band: TgBand, out: &Path, history_path: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let (min_sum, max_sum) = cfg.sum_bounds()?;
    let (schema, raw) = load_table(data)?;
    let split_info = SplitInfo {
        seed: cfg.seed(),
        train_fraction: cfg.train_fraction(),
        min_sum,
        max_sum,
    };
    let (train_set, val_set) = partition(&raw, band, &split_info)?;
    let arch = cfg.arch(schema.n());
    let tc = cfg.train_config();
    log::info!(
        "training on {} samples, validating on {}, {} epochs",
        train_set.len(),
        val_set.len(),
        tc.epochs
    );
    let outcome = train(&train_set, &val_set, &arch, &tc)?;
    let ckpt = Checkpoint {
        arch,
        schema,
        params: outcome.params,
        stats: outcome.stats,
        band,
        center: outcome.center.fc,
        split: split_info,
    };
    save_checkpoint(out, &ckpt)?;
    outcome.history.write_csv(history_path)?;
    let best_auc = outcome.history.best().and_then(|r| r.val_auc);
    let fingerprint = ckpt.fingerprint()?;
    log::info!("best epoch {} (val AUC {best_auc:?}); checkpoint {fingerprint}", outcome.best_epoch);
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_auc,
        fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub band: TgBand,
    pub auc: f64,
    pub precision_at_k: f64,
    pub knn_auc: f64,
    pub knn_precision_at_k: f64,
    pub k: usize,
}

/// Scores the validation partition with the encoder and the KNN baseline.
pub fn cmd_eval(checkpoint: &Path, data: &Path, report_dir: &Path, k: usize, cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let ckpt = load_checkpoint(checkpoint)?;
    let raw = load_dataset(data, &ckpt.schema)?;
    let (train_set, val_set) = partition(&raw, ckpt.band, &ckpt.split)?;
    if k == 0 || k > val_set.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={} (validation size)",
            val_set.len()
        )));
    }
    let targets: Vec<LabeledSample> = train_set.iter().filter(|s| s.y).cloned().collect();
    let center = class_center(&targets, &ckpt.params, &ckpt.stats)?;
    let report = evaluate(&val_set, &ckpt.params, &ckpt.stats, &center, k)?;
    let knn = knn_evaluate(&train_set, &val_set, &ckpt.stats, cfg.knn(), k)?;
    let fingerprint = ckpt.fingerprint()?;
    write_report(report_dir, "", "deepglass", &report, ckpt.band, &fingerprint)?;
    write_report(report_dir, "knn_", "knn", &knn, ckpt.band, &fingerprint)?;
    log::info!(
        "band {}: AUC {:.4}, P@{k} {:.3}; KNN AUC {:.4}, P@{k} {:.3}",
        ckpt.band,
        report.auc,
        report.precision_at_k,
        knn.auc,
        knn.precision_at_k
    );
    Ok(EvalSummary {
        band: ckpt.band,
        auc: report.auc,
        precision_at_k: report.precision_at_k,
        knn_auc: knn.auc,
        knn_precision_at_k: knn.precision_at_k,
        k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenHit {
    /// Zero-based row of the candidate file.
    pub index: usize,
    pub fractions: Composition,
    pub score: f64,
}

/// Ranks candidates by similarity to the stored class center and writes
/// the best `top_k`.
pub fn cmd_screen(checkpoint: &Path, candidates: &Path, top_k: usize, out: &Path) -> Result<Vec<ScreenHit>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let rows = load_compositions(candidates, &ckpt.schema)?;
    if top_k == 0 || top_k > rows.len() {
        return Err(Error::Config(format!(
            "top_k = {top_k} must lie in 1..={} (candidate count)",
            rows.len()
        )));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let feats = features(&refs, &ckpt.params, &ckpt.stats)?;
    let mut ranked: Vec<(usize, f64)> = feats.iter().map(|f| dot(&ckpt.center, f)).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    let hits: Vec<ScreenHit> = ranked
        .into_iter()
        .map(|(index, score)| ScreenHit {
            index,
            fractions: rows[index].clone(),
            score,
        })
        .collect();

    write_atomic(out, |w: &mut dyn Write| {
        let err = |e: csv::Error| Error::Data(format!("{}: {e}", out.display()));
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["rank".to_string(), "index".to_string()];
        head.extend(ckpt.schema.names().iter().cloned());
        head.push("score".into());
        wr.write_record(&head).map_err(err)?;
        for (rank, h) in hits.iter().enumerate() {
            let mut rec = vec![(rank + 1).to_string(), h.index.to_string()];
            rec.extend(h.fractions.iter().map(f64::to_string));
            rec.push(h.score.to_string());
            wr.write_record(&rec).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::io(out, e))
    })?;
    log::info!("scored {} candidates, wrote top {top_k} to {}", rows.len(), out.display());
    Ok(hits)
}

pub fn cmd_enumerate(schema: &ComponentSchema, grid: &GridConfig, out: &Path) -> Result<usize> {
    let count = count_candidates(schema, grid)?;
    log::info!("grid holds {count} candidates");
    let rows = enumerate_candidates(schema, grid)?;
    write_compositions(out, schema, &rows)?;
    log::info!("wrote {} candidates to {}", rows.len(), out.display());
    Ok(rows.len())
}
