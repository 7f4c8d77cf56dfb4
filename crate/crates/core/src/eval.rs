//! Scoring against the target-class center and the ranking metrics used to
//! judge a screen: AUC, ROC and Precision@k.
//!
//! AUC follows the strict-inequality pair count: a tied target/non-target
//! pair contributes 0, not 1/2.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::{LabeledSample, NormalizationStats, TgBand};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{forward_batch_eval, ModelParams};
use crate::numeric::dot;

/// Mean eval-mode feature of the training targets. Not re-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenter {
    pub fc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub index: usize,
    pub score: f64,
    pub y: bool,
    pub tg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub auc: f64,
    /// `(fpr, tpr)` staircase from `(0, 0)` to `(1, 1)`.
    pub roc: Vec<(f64, f64)>,
    pub precision_at_k: f64,
    pub k: usize,
    pub scores: Vec<ScoreRecord>,
}

/// Eval-mode features of normalized, non-augmented compositions.
pub fn features(compositions: &[&[f64]], params: &ModelParams, stats: &NormalizationStats) -> Result<Vec<Vec<f64>>> {
    let xs = compositions
        .iter()
        .map(|c| stats.normalize(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(forward_batch_eval(&xs, params)?.into_iter().map(|t| t.f_out).collect())
}

pub fn class_center(targets: &[LabeledSample], params: &ModelParams, stats: &NormalizationStats) -> Result<ClassCenter> {
    if targets.is_empty() {
        return Err(Error::EmptyClass { label: 1 });
    }
    if targets.iter().any(|s| !s.y) {
        return Err(Error::Data("class center built from a non-target sample".into()));
    }
    let comps: Vec<&[f64]> = targets.iter().map(|s| s.fractions.as_slice()).collect();
    let feats = features(&comps, params, stats)?;
    let mut fc = vec![0.0; feats[0].len()];
    for f in &feats {
        for (c, v) in fc.iter_mut().zip(f) {
            *c += v;
        }
    }
    let count = feats.len() as f64;
    for c in &mut fc {
        *c /= count;
    }
    if dot(&fc, &fc).sqrt() < 1e-6 {
        log::warn!("target class center is close to zero; scores will carry little signal");
    }
    Ok(ClassCenter { fc })
}

/// Inner product of each sample's feature with the center, input order.
pub fn score(
    samples: &[LabeledSample],
    params: &ModelParams,
    stats: &NormalizationStats,
    center: &ClassCenter,
) -> Result<Vec<ScoreRecord>> {
    let comps: Vec<&[f64]> = samples.iter().map(|s| s.fractions.as_slice()).collect();
    let feats = features(&comps, params, stats)?;
    if let Some(f) = feats.first() {
        if f.len() != center.fc.len() {
            return Err(Error::shape("score", center.fc.len(), f.len()));
        }
    }
    Ok(samples
        .iter()
        .zip(feats)
        .enumerate()
        .map(|(index, (s, f))| ScoreRecord {
            index,
            score: dot(&center.fc, &f),
            y: s.y,
            tg: s.tg,
        })
        .collect())
}

fn class_counts(records: &[ScoreRecord]) -> Result<(usize, usize)> {
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::NonFinite(format!("score of sample {}", r.index)));
    }
    let m1 = records.iter().filter(|r| r.y).count();
    let m0 = records.len() - m1;
    if m1 == 0 {
        return Err(Error::EmptyClass { label: 1 });
    }
    if m0 == 0 {
        return Err(Error::EmptyClass { label: 0 });
    }
    Ok((m1, m0))
}

/// Fraction of (target, non-target) pairs where the target scores strictly
/// higher. `O(m log m)`.
pub fn auc(records: &[ScoreRecord]) -> Result<f64> {
    let (m1, m0) = class_counts(records)?;
    let mut negatives: Vec<f64> = records.iter().filter(|r| !r.y).map(|r| r.score).collect();
    negatives.sort_by(f64::total_cmp);
    let pairs: u64 = records
        .iter()
        .filter(|r| r.y)
        .map(|r| negatives.partition_point(|&s| s < r.score) as u64)
        .sum();
    Ok(pairs as f64 / (m1 as f64 * m0 as f64))
}

pub fn roc_points(records: &[ScoreRecord]) -> Result<Vec<(f64, f64)>> {
    let (m1, m0) = class_counts(records)?;
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].y {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / m0 as f64, tp as f64 / m1 as f64));
    }
    Ok(points)
}

/// Target fraction among the `k` highest scores; ties go to the lower index.
pub fn precision_at_k(records: &[ScoreRecord], k: usize) -> Result<f64> {
    if k == 0 || k > records.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={} for Precision@k",
            records.len()
        )));
    }
    let top = top_k(records, k);
    Ok(top.iter().filter(|r| r.y).count() as f64 / k as f64)
}

/// The `k` best records, by descending score then ascending index.
pub fn top_k(records: &[ScoreRecord], k: usize) -> Vec<&ScoreRecord> {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    sorted.truncate(k);
    sorted
}

/// AUC, ROC and Precision@k of an already scored set.
pub fn report_from_scores(scores: Vec<ScoreRecord>, k: usize) -> Result<Report> {
    Ok(Report {
        auc: auc(&scores)?,
        roc: roc_points(&scores)?,
        precision_at_k: precision_at_k(&scores, k)?,
        k,
        scores,
    })
}

pub fn evaluate(
    val: &[LabeledSample],
    params: &ModelParams,
    stats: &NormalizationStats,
    center: &ClassCenter,
    k: usize,
) -> Result<Report> {
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    report_from_scores(score(val, params, stats, center)?, k)
}

#[derive(Serialize)]
struct Summary<'a> {
    model: &'a str,
    auc: f64,
    precision_at_k: f64,
    k: usize,
    band_low: f64,
    band_high: f64,
    n_scored: usize,
    n_target: usize,
    fingerprint: &'a str,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Writes `{prefix}scores.csv`, `{prefix}roc.csv` and `{prefix}summary.json`
/// into `dir`.
pub fn write_report(dir: &Path, prefix: &str, model: &str, report: &Report, band: TgBand, fingerprint: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(format!("{prefix}scores.csv"));
    write_atomic(&path, |w: &mut dyn Write| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "score", "label", "tg"]).map_err(|e| csv_err(&path, e))?;
        for r in &report.scores {
            let label = if r.y { "1" } else { "0" };
            wr.write_record([r.index.to_string(), r.score.to_string(), label.to_string(), r.tg.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
        wr.flush().map_err(|e| Error::io(&path, e))
    })?;

    let path = dir.join(format!("{prefix}roc.csv"));
    write_atomic(&path, |w: &mut dyn Write| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fpr", "tpr"]).map_err(|e| csv_err(&path, e))?;
        for (fpr, tpr) in &report.roc {
            wr.write_record([fpr.to_string(), tpr.to_string()]).map_err(|e| csv_err(&path, e))?;
        }
        wr.flush().map_err(|e| Error::io(&path, e))
    })?;

    let summary = Summary {
        model,
        auc: report.auc,
        precision_at_k: report.precision_at_k,
        k: report.k,
        band_low: band.low(),
        band_high: band.high(),
        n_scored: report.scores.len(),
        n_target: report.scores.iter().filter(|r| r.y).count(),
        fingerprint,
    };
    let path = dir.join(format!("{prefix}summary.json"));
    write_atomic(&path, |w: &mut dyn Write| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(&path, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ArchConfig};
    use crate::numeric::SeededRng;
    use proptest::prelude::*;

    fn recs(targets: &[f64], others: &[f64]) -> Vec<ScoreRecord> {
        targets
            .iter()
            .map(|&s| (s, true))
            .chain(others.iter().map(|&s| (s, false)))
            .enumerate()
            .map(|(index, (score, y))| ScoreRecord { index, score, y, tg: 0.0 })
            .collect()
    }

    fn brute_auc(r: &[ScoreRecord]) -> f64 {
        let mut pairs = 0u64;
        for a in r.iter().filter(|r| r.y) {
            for b in r.iter().filter(|r| !r.y) {
                if a.score > b.score {
                    pairs += 1;
                }
            }
        }
        let m1 = r.iter().filter(|r| r.y).count() as f64;
        pairs as f64 / (m1 * (r.len() as f64 - m1))
    }

    fn trapezoid(points: &[(f64, f64)]) -> f64 {
        points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&recs(&[0.9, 0.4], &[0.5, 0.1])).unwrap(), 0.75);
        assert_eq!(auc(&recs(&[0.9, 0.8], &[0.5, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&recs(&[0.3, 0.3], &[0.3, 0.3])).unwrap(), 0.0);
        assert!(matches!(auc(&recs(&[0.3], &[])), Err(Error::EmptyClass { label: 0 })));
        assert!(matches!(auc(&recs(&[], &[0.3])), Err(Error::EmptyClass { label: 1 })));
    }

    #[test]
    fn auc_matches_brute_force() {
        let mut rng = SeededRng::new(3);
        for trial in 0..100 {
            let r: Vec<ScoreRecord> = (0..200)
                .map(|index| {
                    let raw = rng.uniform();
                    // half the trials draw from 10 levels to force ties
                    let score = if trial % 2 == 0 { (raw * 10.0).floor() / 10.0 } else { raw };
                    ScoreRecord { index, score, y: rng.uniform() < 0.3, tg: 0.0 }
                })
                .collect();
            if r.iter().all(|x| x.y) || r.iter().all(|x| !x.y) {
                continue;
            }
            assert_eq!(auc(&r).unwrap(), brute_auc(&r));
        }
    }

    #[test]
    fn roc_shape() {
        let perfect = recs(&[0.9, 0.8], &[0.5, 0.1]);
        let pts = roc_points(&perfect).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(pts.contains(&(0.0, 1.0)));

        let mut rng = SeededRng::new(8);
        let r: Vec<ScoreRecord> = (0..500)
            .map(|index| ScoreRecord { index, score: rng.standard_normal(), y: rng.uniform() < 0.4, tg: 0.0 })
            .collect();
        let pts = roc_points(&r).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((trapezoid(&pts) - auc(&r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn roc_random_labels_near_half() {
        let mut rng = SeededRng::new(9);
        let r: Vec<ScoreRecord> = (0..10_000)
            .map(|index| ScoreRecord { index, score: rng.uniform(), y: rng.uniform() < 0.5, tg: 0.0 })
            .collect();
        let area = trapezoid(&roc_points(&r).unwrap());
        assert!((area - 0.5).abs() < 0.05, "{area}");
    }

    #[test]
    fn precision_examples() {
        let r = recs(&[0.9], &[0.5, 0.1]);
        assert_eq!(precision_at_k(&r, 1).unwrap(), 1.0);
        assert!((precision_at_k(&r, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(precision_at_k(&r, 0).is_err());
        assert!(precision_at_k(&r, 4).is_err());
        // tie at the cut goes to the lower index
        let tied = recs(&[0.5], &[0.5]);
        assert_eq!(precision_at_k(&tied, 1).unwrap(), 1.0);
        let tied = vec![
            ScoreRecord { index: 0, score: 0.5, y: false, tg: 0.0 },
            ScoreRecord { index: 1, score: 0.5, y: true, tg: 0.0 },
        ];
        assert_eq!(precision_at_k(&tied, 1).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn ranking_metrics_ignore_monotone_transforms(
            scores in prop::collection::vec(-5.0f64..5.0, 4..60),
            labels in prop::collection::vec(any::<bool>(), 60),
        ) {
            let r: Vec<ScoreRecord> = scores.iter().zip(&labels)
                .enumerate()
                .map(|(index, (&score, &y))| ScoreRecord { index, score, y, tg: 0.0 })
                .collect();
            prop_assume!(r.iter().any(|x| x.y) && r.iter().any(|x| !x.y));
            let t: Vec<ScoreRecord> = r.iter().map(|x| ScoreRecord { score: x.score.exp() * 3.0 + 1.0, ..x.clone() }).collect();
            prop_assert_eq!(auc(&r).unwrap(), auc(&t).unwrap());
            prop_assert_eq!(auc(&r).unwrap(), brute_auc(&r));
            let k = r.len() / 2;
            prop_assert_eq!(precision_at_k(&r, k).unwrap(), precision_at_k(&t, k).unwrap());
        }
    }

    fn tiny_model() -> (ModelParams, NormalizationStats) {
        let cfg = ArchConfig { n: 3, d: 4, f: 2, dk: 3, h: 6, k: 4 };
        let stats = NormalizationStats { mean: vec![0.3; 3], std: vec![0.2; 3] };
        (init_params(&cfg, 4).unwrap(), stats)
    }

    fn sample(fractions: Vec<f64>, y: bool) -> LabeledSample {
        LabeledSample { fractions, y, tg: 500.0 }
    }

    #[test]
    fn center_and_scores() {
        let (p, stats) = tiny_model();
        let a = sample(vec![0.5, 0.3, 0.2], true);
        let center = class_center(std::slice::from_ref(&a), &p, &stats).unwrap();
        let f = &features(&[&a.fractions], &p, &stats).unwrap()[0];
        assert_eq!(&center.fc, f);
        let s = score(std::slice::from_ref(&a), &p, &stats, &center).unwrap();
        assert!((s[0].score - 1.0).abs() < 1e-12);

        let many: Vec<LabeledSample> = (0..10)
            .map(|i| sample(vec![0.1 * i as f64, 0.5, 0.5 - 0.05 * i as f64], true))
            .collect();
        let c = class_center(&many, &p, &stats).unwrap();
        let norm = dot(&c.fc, &c.fc).sqrt();
        assert!(norm <= 1.0 + 1e-12);
        for r in score(&many, &p, &stats, &c).unwrap() {
            assert!(r.score.abs() <= norm + 1e-12);
        }
        assert!(class_center(&[], &p, &stats).is_err());

        let zero = ClassCenter { fc: vec![0.0; 4] };
        assert!(score(&many, &p, &stats, &zero).unwrap().iter().all(|r| r.score == 0.0));
    }

    #[test]
    fn evaluate_matches_parts() {
        let (p, stats) = tiny_model();
        let mut rng = SeededRng::new(12);
        let val: Vec<LabeledSample> = (0..30)
            .map(|i| sample((0..3).map(|_| rng.uniform()).collect(), i % 3 == 0))
            .collect();
        let center = class_center(&val.iter().filter(|s| s.y).cloned().collect::<Vec<_>>(), &p, &stats).unwrap();
        let rep = evaluate(&val, &p, &stats, &center, 5).unwrap();
        let scores = score(&val, &p, &stats, &center).unwrap();
        assert_eq!(rep.auc, auc(&scores).unwrap());
        assert_eq!(rep.roc, roc_points(&scores).unwrap());
        assert_eq!(rep.precision_at_k, precision_at_k(&scores, 5).unwrap());
        assert_eq!(rep, evaluate(&val, &p, &stats, &center, 5).unwrap());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let rep = report_from_scores(recs(&[0.9, 0.4], &[0.5, 0.1]), 2).unwrap();
        let band = TgBand::new(500.0, 600.0).unwrap();
        write_report(dir.path(), "knn_", "knn", &rep, band, "abc").unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("knn_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["auc"], 0.75);
        assert_eq!(summary["k"], 2);
        assert_eq!(summary["band_low"], 500.0);
        let scores = std::fs::read_to_string(dir.path().join("knn_scores.csv")).unwrap();
        assert_eq!(scores.lines().count(), 5);
        assert!(scores.starts_with("index,score,label,tg\n0,0.9,1,0\n"));
        let roc = std::fs::read_to_string(dir.path().join("knn_roc.csv")).unwrap();
        assert!(roc.starts_with("fpr,tpr\n0,0\n"));
        assert!(roc.trim_end().ends_with("1,1"));
    }
}
