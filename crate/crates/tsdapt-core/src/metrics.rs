//! Evaluation metrics: rank-based macro AUC, argmax accuracy, and the
//! per-class raw-data variation measures.

use crate::data::TimeSeriesWindow;
use crate::rng;
use crate::tensor::Array;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 distinct labels for AUC, got {0}")]
    SingleClass(usize),
    #[error("scores and labels disagree: {scores} rows vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metrics need a non-empty input")]
    Empty,
    #[error("label {label} out of range for {classes} score columns")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// Binary AUC by the rank statistic, with tied scores counted half.
/// Equivalent to exhaustive pair counting, including tie handling.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks over tie groups (1-based)
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }

    let pos = positive.iter().filter(|&&p| p).count() as f64;
    let neg = n as f64 - pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| *r)
        .sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// One-vs-rest AUC per class present in `labels`, macro-averaged.
///
/// `scores` is `[count, L]`; column `c` scores class `c`. Requires at
/// least two distinct labels.
pub fn auc_macro(scores: &Array, labels: &[usize]) -> Result<f64, MetricsError> {
    let (n, l) = scores
        .shape()
        .iter()
        .copied()
        .collect::<Vec<_>>()
        .try_into()
        .map(|[a, b]: [usize; 2]| (a, b))
        .map_err(|_| MetricsError::Empty)?;
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if n != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: n,
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(MetricsError::LabelOutOfRange {
            label: bad,
            classes: l,
        });
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(MetricsError::SingleClass(present.len()));
    }

    let mut total = 0.0;
    for &class in &present {
        let column: Vec<f64> = (0..n).map(|i| scores.data()[i * l + class]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == class).collect();
        total += binary_auc(&column, &positive);
    }
    Ok(total / present.len() as f64)
}

/// Fraction of argmax matches; argmax ties break toward the lowest
/// class index.
pub fn accuracy(predictions: &Array, labels: &[usize]) -> Result<f64, MetricsError> {
    let shape = predictions.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(MetricsError::Empty);
    }
    let (n, l) = (shape[0], shape[1]);
    if n != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: n,
            labels: labels.len(),
        });
    }
    let mut correct = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = &predictions.data()[i * l..(i + 1) * l];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Distance measure for [`class_variation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationMetric {
    Euclidean,
    Kl,
}

/// Mean and sample standard deviation of pairwise distances for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassVariation {
    pub label: usize,
    pub examples: usize,
    pub euclidean_mean: f64,
    pub euclidean_std: f64,
    pub euclidean_pairs: usize,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub kl_pairs: usize,
}

/// Per-class variation report; classes with fewer than two examples are
/// listed in `skipped`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub classes: Vec<ClassVariation>,
    pub skipped: Vec<usize>,
}

const KL_BINS: usize = 32;
const KL_SMOOTHING: f64 = 1e-6;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Converts a window into a 32-bin histogram distribution over the
/// class's global value range, smoothed and renormalized.
fn window_histogram(window: &TimeSeriesWindow, lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut bins = vec![0.0f64; KL_BINS];
    for &v in window.values.data() {
        let idx = (((v - lo) / span) * KL_BINS as f64) as usize;
        bins[idx.min(KL_BINS - 1)] += 1.0;
    }
    let total: f64 = bins.iter().sum();
    for b in &mut bins {
        *b = *b / total + KL_SMOOTHING;
    }
    let total: f64 = bins.iter().sum();
    for b in &mut bins {
        *b /= total;
    }
    bins
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

/// Uniform subsample of `count` items from `0..total` without
/// replacement (partial Fisher-Yates), seeded.
fn sample_pairs(total: usize, count: usize, seed: u64, label: &str) -> Vec<usize> {
    if count >= total {
        return (0..total).collect();
    }
    let mut rng = rng::stream(seed, label);
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.gen_range(i..total);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Pairwise Euclidean distance (unordered pairs of flattened raw
/// values) and pairwise KL divergence (ordered pairs of per-window
/// histograms) within each class.
///
/// When a class exceeds `pair_budget` pairs, a seeded uniform subsample
/// keeps the report reproducible. Classes with fewer than two examples
/// are skipped with a warning.
pub fn class_variation(
    windows: &[TimeSeriesWindow],
    pair_budget: usize,
    seed: u64,
) -> VariationReport {
    let mut labels: Vec<usize> = windows.iter().filter_map(|w| w.label).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut report = VariationReport::default();
    for label in labels {
        let members: Vec<&TimeSeriesWindow> = windows
            .iter()
            .filter(|w| w.label == Some(label))
            .collect();
        let m = members.len();
        if m < 2 {
            log::warn!("class {label}: only {m} example(s), skipping variation");
            report.skipped.push(label);
            continue;
        }

        // Euclidean over unordered pairs
        let ed_total = m * (m - 1) / 2;
        let ed_chosen = sample_pairs(
            ed_total,
            pair_budget,
            seed,
            &format!("variation/ed/{label}"),
        );
        let mut ed = Vec::with_capacity(ed_chosen.len());
        for &flat in &ed_chosen {
            let (i, j) = unordered_pair(flat, m);
            let d: f64 = members[i]
                .values
                .data()
                .iter()
                .zip(members[j].values.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            ed.push(d);
        }
        let (ed_mean, ed_std) = mean_std(&ed);

        // KL over ordered pairs of histograms on the class's value range
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in &members {
            for &v in w.values.data() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let histograms: Vec<Vec<f64>> = members.iter().map(|w| window_histogram(w, lo, hi)).collect();
        let kl_total = m * (m - 1);
        let kl_chosen = sample_pairs(
            kl_total,
            pair_budget,
            seed,
            &format!("variation/kl/{label}"),
        );
        let mut kl = Vec::with_capacity(kl_chosen.len());
        for &flat in &kl_chosen {
            let (i, j) = ordered_pair(flat, m);
            kl.push(kl_divergence(&histograms[i], &histograms[j]));
        }
        let (kl_mean, kl_std) = mean_std(&kl);

        report.classes.push(ClassVariation {
            label,
            examples: m,
            euclidean_mean: ed_mean,
            euclidean_std: ed_std,
            euclidean_pairs: ed.len(),
            kl_mean,
            kl_std,
            kl_pairs: kl.len(),
        });
    }
    report
}

/// The `flat`-th unordered pair (i < j) of `0..m`.
fn unordered_pair(flat: usize, m: usize) -> (usize, usize) {
    let mut remaining = flat;
    for i in 0..m - 1 {
        let row = m - 1 - i;
        if remaining < row {
            return (i, i + 1 + remaining);
        }
        remaining -= row;
    }
    unreachable!("flat index within C(m, 2)")
}

/// The `flat`-th ordered pair (i != j) of `0..m`.
fn ordered_pair(flat: usize, m: usize) -> (usize, usize) {
    let i = flat / (m - 1);
    let mut j = flat % (m - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scores(rows: &[&[f64]]) -> Array {
        let l = rows[0].len();
        Array::new(
            vec![rows.len(), l],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    /// Brute-force pair counting oracle for one-vs-rest AUC.
    fn auc_pair_oracle(scores: &Array, labels: &[usize]) -> f64 {
        let l = scores.shape()[1];
        let n = labels.len();
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        let mut total = 0.0;
        for &c in &present {
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                if labels[i] != c {
                    continue;
                }
                for j in 0..n {
                    if labels[j] == c {
                        continue;
                    }
                    let (si, sj) = (scores.data()[i * l + c], scores.data()[j * l + c]);
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
            total += wins / pairs;
        }
        total / present.len() as f64
    }

    #[test]
    fn binary_hand_case() {
        // scores [0.1, 0.4, 0.35, 0.8], labels [0,0,1,1] -> 3 of 4 pairs
        let s = scores(&[&[0.9, 0.1], &[0.6, 0.4], &[0.65, 0.35], &[0.2, 0.8]]);
        let auc = auc_macro(&s, &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(auc, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn perfect_and_tied_scores() {
        let s = scores(&[&[0.9, 0.1], &[0.8, 0.2], &[0.1, 0.9], &[0.2, 0.8]]);
        assert_abs_diff_eq!(auc_macro(&s, &[0, 0, 1, 1]).unwrap(), 1.0, epsilon = 1e-12);
        let tied = scores(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        assert_abs_diff_eq!(auc_macro(&tied, &[0, 0, 1, 1]).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn matches_pair_counting_oracle_exactly() {
        let mut rng = crate::rng::stream(41, "test/auc-oracle");
        for case in 0..100 {
            let l = rng.gen_range(2..5);
            let n = rng.gen_range(2..50);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..l)).collect();
            // ensure at least two distinct labels
            labels[0] = 0;
            if labels.iter().all(|&y| y == 0) {
                labels[n - 1] = 1;
            }
            let mut data = Vec::with_capacity(n * l);
            for _ in 0..n * l {
                // quantized scores produce plenty of exact ties
                let v: f64 = rng.gen_range(0..5) as f64 / 4.0;
                data.push(v);
            }
            let s = Array::new(vec![n, l], data).unwrap();
            let got = auc_macro(&s, &labels).unwrap();
            let want = auc_pair_oracle(&s, &labels);
            assert_eq!(got.to_bits(), want.to_bits(), "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let mut rng = crate::rng::stream(43, "test/auc-monotone");
        for _ in 0..20 {
            let n = rng.gen_range(4..30);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let cubed: Vec<f64> = data.iter().map(|v| v * v * v).collect();
            let a = auc_macro(&Array::new(vec![n, 3], data).unwrap(), &labels).unwrap();
            let b = auc_macro(&Array::new(vec![n, 3], cubed).unwrap(), &labels).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_class_rejected() {
        let s = scores(&[&[0.9, 0.1], &[0.8, 0.2]]);
        assert!(matches!(auc_macro(&s, &[0, 0]), Err(MetricsError::SingleClass(1))));
    }

    #[test]
    fn accuracy_cases() {
        let s = scores(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4], &[0.3, 0.7]]);
        assert_eq!(accuracy(&s, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&s, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&s, &[0, 1, 0, 0]).unwrap(), 0.75);
        // argmax tie breaks toward the lowest index
        let tied = scores(&[&[0.5, 0.5]]);
        assert_eq!(accuracy(&tied, &[0]).unwrap(), 1.0);
        assert_eq!(accuracy(&tied, &[1]).unwrap(), 0.0);
        assert!(accuracy(&s, &[0]).is_err());
    }

    fn window(label: usize, values: Vec<f64>) -> TimeSeriesWindow {
        let h = values.len();
        TimeSeriesWindow {
            person: "p".into(),
            week: 0,
            label: Some(label),
            context: vec![0.0; 9],
            values: Array::new(vec![1, h], values).unwrap(),
        }
    }

    #[test]
    fn identical_windows_have_zero_distances() {
        let ws = vec![window(0, vec![1.0, 2.0]), window(0, vec![1.0, 2.0])];
        let report = class_variation(&ws, 1000, 1);
        assert_eq!(report.classes.len(), 1);
        assert_abs_diff_eq!(report.classes[0].euclidean_mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.classes[0].kl_mean, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn euclidean_hand_case_three_four_five() {
        let ws = vec![window(0, vec![0.0, 0.0]), window(0, vec![3.0, 4.0])];
        let report = class_variation(&ws, 1000, 1);
        assert_abs_diff_eq!(report.classes[0].euclidean_mean, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_exhaustive_double_loop_oracle() {
        let mut rng = crate::rng::stream(47, "test/variation-oracle");
        let ws: Vec<TimeSeriesWindow> = (0..9)
            .map(|i| window(i % 2, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()))
            .collect();
        let report = class_variation(&ws, usize::MAX, 5);

        for class in 0..2usize {
            let members: Vec<&TimeSeriesWindow> =
                ws.iter().filter(|w| w.label == Some(class)).collect();
            let m = members.len();
            // exhaustive pairwise oracle
            let mut ed = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    ed.push(
                        members[i]
                            .values
                            .data()
                            .iter()
                            .zip(members[j].values.data())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt(),
                    );
                }
            }
            let mean = ed.iter().sum::<f64>() / ed.len() as f64;
            let got = &report.classes[class];
            assert_eq!(got.euclidean_pairs, ed.len());
            assert_abs_diff_eq!(got.euclidean_mean, mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_ordered() {
        let mut rng = crate::rng::stream(53, "test/variation-kl");
        let ws: Vec<TimeSeriesWindow> = (0..6)
            .map(|_| window(0, (0..20).map(|_| rng.gen_range(-1.0..3.0)).collect()))
            .collect();
        let report = class_variation(&ws, usize::MAX, 5);
        let c = &report.classes[0];
        assert_eq!(c.kl_pairs, 6 * 5); // ordered pairs
        assert_eq!(c.euclidean_pairs, 15); // unordered pairs
        assert!(c.kl_mean >= 0.0);
    }

    #[test]
    fn pair_budget_subsamples_deterministically() {
        let mut rng = crate::rng::stream(59, "test/variation-budget");
        let ws: Vec<TimeSeriesWindow> = (0..20)
            .map(|_| window(0, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let a = class_variation(&ws, 50, 7);
        let b = class_variation(&ws, 50, 7);
        assert_eq!(a, b);
        assert_eq!(a.classes[0].euclidean_pairs, 50);
        let c = class_variation(&ws, 50, 8);
        assert_ne!(a.classes[0].euclidean_mean.to_bits(), c.classes[0].euclidean_mean.to_bits());
    }

    #[test]
    fn small_classes_are_skipped() {
        let ws = vec![
            window(0, vec![1.0, 2.0]),
            window(0, vec![2.0, 1.0]),
            window(1, vec![0.0, 0.0]),
        ];
        let report = class_variation(&ws, 1000, 1);
        assert_eq!(report.classes.len(), 1);
        assert_eq!(report.skipped, vec![1]);
    }

    #[test]
    fn pair_index_enumeration_covers_everything() {
        let m = 7;
        let mut seen = std::collections::BTreeSet::new();
        for flat in 0..m * (m - 1) / 2 {
            let (i, j) = unordered_pair(flat, m);
            assert!(i < j && j < m);
            seen.insert((i, j));
        }
        assert_eq!(seen.len(), m * (m - 1) / 2);
        let mut seen = std::collections::BTreeSet::new();
        for flat in 0..m * (m - 1) {
            let (i, j) = ordered_pair(flat, m);
            assert!(i != j && i < m && j < m);
            seen.insert((i, j));
        }
        assert_eq!(seen.len(), m * (m - 1));
    }
}
