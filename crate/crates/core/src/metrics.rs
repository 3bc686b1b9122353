//! Accuracy, rank-based AUC and per-fold aggregation.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Tallies binary predictions against labels, class 1 being positive.
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            for v in [p, a] {
                if v > 1 {
                    return Err(Error::BadLabel { label: v, classes: 2 });
                }
            }
            match (p, a) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::EmptyConfusion),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// Mann-Whitney AUC with midranks for tied scores. `labels` are 0 or 1.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::BadLabel { label, classes: 2 });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&i| labels[i] == 1).count() as f64;
        start = end;
    }
    let np = positives as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub auc: f64,
}

/// Per-fold metrics with population standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub folds: Vec<FoldMetrics>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `"89.72 ± 0.38"` from fractions.
pub fn format_percent(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", mean * 100.0, std * 100.0)
}

impl FoldReport {
    pub fn new(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::TooFewSamples("a report needs at least one fold".into()));
        }
        Ok(Self { folds })
    }

    pub fn accuracy(&self) -> (f64, f64) {
        mean_std(self.folds.iter().map(|f| f.accuracy))
    }

    pub fn auc(&self) -> (f64, f64) {
        mean_std(self.folds.iter().map(|f| f.auc))
    }

    pub fn summary(&self) -> String {
        let (am, asd) = self.accuracy();
        let (um, usd) = self.auc();
        format!(
            "accuracy {} auc {}",
            format_percent(am, asd),
            format_percent(um, usd)
        )
    }

    /// One row per fold and a trailing `mean±std` row. Standard deviations
    /// divide by the fold count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,auc\n");
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(out, "{i},{:.6},{:.6}", f.accuracy, f.auc).unwrap();
        }
        let (am, asd) = self.accuracy();
        let (um, usd) = self.auc();
        writeln!(out, "mean±std,{am:.6}±{asd:.6},{um:.6}±{usd:.6}").unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn pair_oracle(scores: &[f64], labels: &[usize]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn accuracy_examples() {
        let c = |tp, tn, fp, fn_| ConfusionCounts { tp, tn, fp, fn_ };
        assert_eq!(accuracy(&c(8, 2, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&c(0, 0, 5, 5)).unwrap(), 0.0);
        assert_eq!(accuracy(&c(3, 2, 1, 4)).unwrap(), 0.5);
        assert!(matches!(accuracy(&c(0, 0, 0, 0)), Err(Error::EmptyConfusion)));
    }

    #[test]
    fn confusion_from_predictions() {
        let c = ConfusionCounts::from_predictions(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 1, fn_: 1 });
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = rng::generator(3);
        for _ in 0..50 {
            let n = rng.random_range(2..200);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 4.0).collect();
            let a = auc(&scores, &labels).unwrap();
            assert!((a - pair_oracle(&scores, &labels)).abs() < 1e-12);
            let mapped: Vec<f64> = scores.iter().map(|s| 3.0 * s.exp() - 1.0).collect();
            assert!((auc(&mapped, &labels).unwrap() - a).abs() < 1e-12);
        }
    }

    #[test]
    fn report_statistics_and_format() {
        let f = |a| FoldMetrics { accuracy: a, auc: a };
        let r = FoldReport::new(vec![f(1.0), f(0.0)]).unwrap();
        assert_eq!(r.accuracy(), (0.5, 0.5));
        let r = FoldReport::new(vec![f(0.7); 4]).unwrap();
        assert_eq!(r.accuracy().1, 0.0);
        assert_eq!(format_percent(0.8972, 0.0038), "89.72 ± 0.38");
        let csv = FoldReport::new(vec![f(1.0), f(0.5)]).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "fold,accuracy,auc");
        assert_eq!(lines[1], "0,1.000000,1.000000");
        assert!(lines[3].starts_with("mean±std,0.750000±0.250000"));
    }
}
