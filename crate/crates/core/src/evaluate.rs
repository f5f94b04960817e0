//! Sample-level scoring and record-level cross-validation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bilstm::{train, BilstmModel, NetworkConfig, TrainConfig, TrainSequence};
use crate::error::{Error, Result};
use crate::preprocess::WINDOW_LEN;

/// Repeats every window probability once per sample of its window.
pub fn expand(window_probs: &[f64]) -> Vec<f64> {
    window_probs
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, WINDOW_LEN))
        .collect()
}

/// Scores of the scored samples (label 0 or 1) sorted by descending score.
fn scored(scores: &[f64], labels: &[i8]) -> Result<(Vec<(f64, bool)>, usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores".into(),
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        match y {
            -1 => continue,
            0 | 1 => {}
            v => {
                return Err(Error::InvalidLabel {
                    index: i,
                    value: v as i64,
                })
            }
        }
        if !s.is_finite() {
            return Err(Error::NonFinite {
                channel: "scores".into(),
                index: i,
            });
        }
        pairs.push((s, y == 1));
    }
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} positive and {neg} negative samples"
        )));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok((pairs, pos, neg))
}

/// `(tp, fp)` after each group of equal scores, highest scores first.
fn threshold_counts(pairs: &[(f64, bool)]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Step-wise average precision over distinct score thresholds. Samples
/// labelled -1 are ignored.
pub fn auprc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    let (pairs, pos, _) = scored(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in threshold_counts(&pairs) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Samples labelled -1 are ignored.
pub fn auroc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    let (pairs, pos, neg) = scored(scores, labels)?;
    let mut wins = 0.0;
    let mut neg_below = neg as f64;
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        let (mut p, mut n) = (0usize, 0usize);
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        neg_below -= n as f64;
        wins += p as f64 * (neg_below + 0.5 * n as f64);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auprc: f64,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_masked: usize,
}

pub fn evaluate(scores: &[f64], labels: &[i8]) -> Result<EvalReport> {
    Ok(EvalReport {
        auprc: auprc(scores, labels)?,
        auroc: auroc(scores, labels)?,
        n_pos: labels.iter().filter(|&&y| y == 1).count(),
        n_neg: labels.iter().filter(|&&y| y == 0).count(),
        n_masked: labels.iter().filter(|&&y| y == -1).count(),
    })
}

/// Per-fold reports with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTable {
    pub folds: Vec<EvalReport>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl FoldTable {
    pub fn auprc_mean_std(&self) -> (f64, f64) {
        mean_std(self.folds.iter().map(|r| r.auprc))
    }

    pub fn auroc_mean_std(&self) -> (f64, f64) {
        mean_std(self.folds.iter().map(|r| r.auroc))
    }

    /// Aligned text: one row per fold, then `Mean (STD)`.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12}{:>16}{:>16}\n", "fold", "AUPRC", "AUROC");
        for (i, r) in self.folds.iter().enumerate() {
            s.push_str(&format!(
                "{:<12}{:>16.4}{:>16.4}\n",
                format!("fold {}", i + 1),
                r.auprc,
                r.auroc
            ));
        }
        let (pm, ps) = self.auprc_mean_std();
        let (rm, rs) = self.auroc_mean_std();
        s.push_str(&format!(
            "{:<12}{:>16}{:>16}\n",
            "Mean (STD)",
            format!("{pm:.4} ({ps:.4})"),
            format!("{rm:.4} ({rs:.4})")
        ));
        s
    }

    /// `fold,AUPRC,AUROC` rows, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,AUPRC,AUROC\n");
        for (i, r) in self.folds.iter().enumerate() {
            s.push_str(&format!("{},{:?},{:?}\n", i + 1, r.auprc, r.auroc));
        }
        let (pm, ps) = self.auprc_mean_std();
        let (rm, rs) = self.auroc_mean_std();
        s.push_str(&format!("mean,{pm:?},{rm:?}\nstd,{ps:?},{rs:?}\n"));
        s
    }
}

/// Seeded shuffle of record indices, dealt round-robin into `k` folds.
pub fn fold_assignment(n_records: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n_records < k {
        return Err(Error::InvalidParameter(format!(
            "{n_records} records cannot fill {k} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..n_records).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, r) in idx.into_iter().enumerate() {
        folds[i % k].push(r);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// A record's full window feature matrix with its window and sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRecord {
    pub features: Array2<f64>,
    pub window_labels: Vec<i8>,
    pub sample_labels: Vec<i8>,
}

impl LabelledRecord {
    pub fn training_sequence(&self) -> Result<TrainSequence> {
        TrainSequence::without_non_target(self.features.view(), &self.window_labels)
    }

    /// Sample labels covered by the windows.
    pub fn scored_labels(&self) -> &[i8] {
        let n = (self.features.nrows() * WINDOW_LEN).min(self.sample_labels.len());
        &self.sample_labels[..n]
    }
}

/// Pooled sample-level metrics of `models` (ensembled) over `records`.
pub fn evaluate_records(models: &[BilstmModel], records: &[&LabelledRecord]) -> Result<EvalReport> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let probs = expand(&crate::bilstm::ensemble_predict(models, r.features.view())?);
        let y = r.scored_labels();
        scores.extend_from_slice(&probs[..y.len()]);
        labels.extend_from_slice(y);
    }
    evaluate(&scores, &labels)
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub table: FoldTable,
    pub folds: Vec<Vec<usize>>,
    /// One model per fold, usable as an ensemble.
    pub models: Vec<BilstmModel>,
}

/// Trains on `k - 1` folds and scores the held-out fold, for every fold.
pub fn cross_validate(
    records: &[LabelledRecord],
    k: usize,
    net_cfg: NetworkConfig,
    train_cfg: &TrainConfig,
    columns: Option<Vec<usize>>,
) -> Result<CrossValidation> {
    let folds = fold_assignment(records.len(), k, train_cfg.seed)?;
    let sequences: Vec<TrainSequence> = records
        .iter()
        .map(LabelledRecord::training_sequence)
        .collect::<Result<_>>()?;
    let mut reports = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for (f, held) in folds.iter().enumerate() {
        let train_set: Vec<TrainSequence> = (0..records.len())
            .filter(|i| !held.contains(i))
            .map(|i| sequences[i].clone())
            .filter(|s| !s.is_empty())
            .collect();
        let cfg = TrainConfig {
            seed: train_cfg.seed.wrapping_add(f as u64 + 1),
            ..*train_cfg
        };
        let model = train(&train_set, net_cfg, &cfg, columns.clone())?.model;
        let held_records: Vec<&LabelledRecord> = held.iter().map(|&i| &records[i]).collect();
        reports.push(evaluate_records(std::slice::from_ref(&model), &held_records)?);
        models.push(model);
    }
    Ok(CrossValidation {
        table: FoldTable { folds: reports },
        folds,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Enumerates every distinct cutoff and accumulates the curves directly.
    fn oracle(scores: &[f64], labels: &[i8]) -> (f64, f64) {
        let kept: Vec<(f64, i8)> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y != -1)
            .map(|(&s, &y)| (s, y))
            .collect();
        let pos = kept.iter().filter(|p| p.1 == 1).count() as f64;
        let neg = kept.len() as f64 - pos;
        let mut cuts: Vec<f64> = kept.iter().map(|p| p.0).collect();
        cuts.sort_by(|a, b| b.total_cmp(a));
        cuts.dedup();
        let (mut ap, mut prev_r) = (0.0, 0.0);
        let (mut roc, mut prev_tpr, mut prev_fpr) = (0.0, 0.0, 0.0);
        for c in cuts {
            let tp = kept.iter().filter(|p| p.0 >= c && p.1 == 1).count() as f64;
            let fp = kept.iter().filter(|p| p.0 >= c && p.1 == 0).count() as f64;
            let (r, tpr, fpr) = (tp / pos, tp / pos, fp / neg);
            ap += (r - prev_r) * tp / (tp + fp);
            roc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
            prev_r = r;
            prev_tpr = tpr;
            prev_fpr = fpr;
        }
        (ap, roc)
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand(&[0.3]), vec![0.3; 1000]);
        assert!(expand(&[]).is_empty());
        let e = expand(&[0.1, 0.9]);
        assert_eq!(e.len(), 2000);
        assert!(e[..1000].iter().all(|&v| v == 0.1));
        assert!(e[1000..].iter().all(|&v| v == 0.9));
    }

    #[test]
    fn perfect_separation() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let y = [1, 1, 0, 0];
        assert_eq!(auprc(&s, &y).unwrap(), 1.0);
        assert_eq!(auroc(&s, &y).unwrap(), 1.0);
    }

    #[test]
    fn four_sample_example() {
        let s = [0.9, 0.8, 0.3, 0.2];
        let y = [1, 0, 0, 1];
        let (ap, roc) = oracle(&s, &y);
        assert_abs_diff_eq!(auprc(&s, &y).unwrap(), ap, epsilon = 1e-12);
        assert_abs_diff_eq!(auroc(&s, &y).unwrap(), roc, epsilon = 1e-12);
        // By hand: precision 1 at recall 1/2, 1/2 at recall 1.
        assert_abs_diff_eq!(ap, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(roc, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn masked_samples_are_deleted() {
        let y = [1, 0, -1, 1];
        for masked in [-5.0, 0.4, 99.0] {
            let s = [0.7, 0.5, masked, 0.2];
            assert_eq!(auprc(&s, &y).unwrap(), auprc(&[0.7, 0.5, 0.2], &[1, 0, 1]).unwrap());
            assert_eq!(auroc(&s, &y).unwrap(), auroc(&[0.7, 0.5, 0.2], &[1, 0, 1]).unwrap());
        }
    }

    #[test]
    fn undefined_and_invalid_inputs() {
        assert!(matches!(auprc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&[0.1, 0.2], &[0, -1]), Err(Error::UndefinedMetric(_))));
        assert!(auprc(&[0.1], &[1, 0]).is_err());
        assert!(matches!(auprc(&[0.1, 0.2], &[1, 2]), Err(Error::InvalidLabel { .. })));
        assert!(auroc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(auroc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        // All tied: one threshold, precision = prevalence.
        assert_abs_diff_eq!(auprc(&[0.5; 4], &[1, 0, 0, 0]).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn all_label_patterns_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pattern in 0u32..256 {
            let y: Vec<i8> = (0..8).map(|b| ((pattern >> b) & 1) as i8).collect();
            if y.iter().all(|&v| v == 1) || y.iter().all(|&v| v == 0) {
                continue;
            }
            for _ in 0..3 {
                // Coarse scores so ties occur.
                let s: Vec<f64> = (0..8).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
                let (ap, roc) = oracle(&s, &y);
                assert!((auprc(&s, &y).unwrap() - ap).abs() <= 1e-12);
                assert!((auroc(&s, &y).unwrap() - roc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shuffled_labels_give_chance_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut total = 0.0;
        for _ in 0..20 {
            let s: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
            let y: Vec<i8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
            let a = auroc(&s, &y).unwrap();
            assert!((a - 0.5).abs() < 0.05, "{a}");
            total += a;
        }
        assert!((total / 20.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn folds_partition_records() {
        let folds = fold_assignment(23, 10, 4).unwrap();
        assert_eq!(folds.len(), 10);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 2 || f.len() == 3));
        assert_eq!(folds, fold_assignment(23, 10, 4).unwrap());
        assert!(fold_assignment(5, 10, 0).is_err());
        assert!(fold_assignment(5, 1, 0).is_err());
    }

    #[test]
    fn fold_table_rendering() {
        let r = |a: f64, b: f64| EvalReport {
            auprc: a,
            auroc: b,
            n_pos: 1,
            n_neg: 1,
            n_masked: 0,
        };
        let t = FoldTable {
            folds: vec![r(0.5, 0.9), r(0.7, 0.8)],
        };
        let (m, s) = t.auprc_mean_std();
        assert_abs_diff_eq!(m, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s, (0.02f64).sqrt(), epsilon = 1e-12);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("fold,AUPRC,AUROC\n1,0.5,0.9\n2,0.7,0.8\nmean,"));
        let text = t.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("Mean (STD)"));
    }

    proptest! {
        #[test]
        fn rank_invariance(
            s in proptest::collection::vec(-3.0f64..3.0, 2..40),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<i8> = s.iter().map(|_| rng.random_range(-1..2)).collect();
            y[0] = 1;
            y[1] = 0;
            let t: Vec<f64> = s.iter().map(|v| (2.0 * v).exp() + 3.0).collect();
            prop_assert!((auprc(&s, &y).unwrap() - auprc(&t, &y).unwrap()).abs() < 1e-12);
            prop_assert!((auroc(&s, &y).unwrap() - auroc(&t, &y).unwrap()).abs() < 1e-12);
            let (ap, roc) = oracle(&s, &y);
            prop_assert!((auprc(&s, &y).unwrap() - ap).abs() < 1e-12);
            prop_assert!((auroc(&s, &y).unwrap() - roc).abs() < 1e-12);
        }

        #[test]
        fn expansion_preserves_metrics(
            p in proptest::collection::vec(0.0f64..1.0, 2..8),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<i8> = p.iter().map(|_| rng.random_range(0..2)).collect();
            y[0] = 1;
            y[1] = 0;
            let ye: Vec<i8> = y.iter().flat_map(|&v| std::iter::repeat_n(v, WINDOW_LEN)).collect();
            let pe = expand(&p);
            prop_assert!((auprc(&p, &y).unwrap() - auprc(&pe, &ye).unwrap()).abs() < 1e-12);
            prop_assert!((auroc(&p, &y).unwrap() - auroc(&pe, &ye).unwrap()).abs() < 1e-12);
        }
    }
}
