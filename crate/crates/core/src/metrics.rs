//! Classification metrics over masked node sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

fn selected<'a>(pred: &'a [usize], truth: &'a [usize], mask: &'a [bool]) -> Result<Vec<(usize, usize)>> {
    if pred.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions, {} labels, {} mask entries",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    let pairs: Vec<_> = pred
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (p, t))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Metric("empty mask".into()));
    }
    Ok(pairs)
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}

/// F1 from globally pooled true/false positives and false negatives.
pub fn micro_f1(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    let pairs = selected(pred, truth, mask)?;
    let tp = pairs.iter().filter(|(p, t)| p == t).count() as f64;
    // every miss is one false positive (for the predicted class) and one
    // false negative (for the true class)
    let miss = pairs.len() as f64 - tp;
    Ok(f1(tp, miss, miss))
}

pub fn accuracy(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    let pairs = selected(pred, truth, mask)?;
    Ok(pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn per_class(pred: &[usize], truth: &[usize], mask: &[bool], num_classes: usize) -> Result<Vec<ClassStats>> {
    let pairs = selected(pred, truth, mask)?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for &(p, t) in &pairs {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Metric(format!("label out of {num_classes} classes")));
        }
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
            ClassStats {
                precision: ratio(tp[c], fp[c]),
                recall: ratio(tp[c], fn_[c]),
                f1: f1(tp[c] as f64, fp[c] as f64, fn_[c] as f64),
                support: tp[c] + fn_[c],
            }
        })
        .collect())
}

/// Per-class F1 averaged with support weights.
pub fn weighted_f1(pred: &[usize], truth: &[usize], mask: &[bool], num_classes: usize) -> Result<f64> {
    let stats = per_class(pred, truth, mask, num_classes)?;
    let total: usize = stats.iter().map(|s| s.support).sum();
    Ok(stats.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64)
}

/// Per node, every label ranked by descending probability; ties go to the
/// smaller label index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ranked: Vec<Vec<(usize, f64)>>,
}

impl PredictionSet {
    pub fn from_rows(rows: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let ranked = rows
            .into_iter()
            .map(|row| {
                let mut r: Vec<(usize, f64)> = row.into_iter().enumerate().collect();
                r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                r
            })
            .collect();
        Self { ranked }
    }

    pub fn from_tensor<T: Scalar>(probs: &Tensor<T>) -> Self {
        Self::from_rows((0..probs.rows()).map(|r| probs.row(r).iter().map(|v| v.as_f64()).collect()))
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.ranked.first().map_or(0, Vec::len)
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.ranked.iter().map(|r| r[0].0).collect()
    }

    pub fn in_top_k(&self, node: usize, label: usize, k: usize) -> bool {
        self.ranked[node].iter().take(k).any(|&(l, _)| l == label)
    }

    /// The truth when it is within the first `k`, else the top label.
    pub fn adjusted(&self, truth: &[usize], k: usize) -> Vec<usize> {
        (0..self.len())
            .map(|i| if self.in_top_k(i, truth[i], k) { truth[i] } else { self.ranked[i][0].0 })
            .collect()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_classes() {
            return Err(Error::Metric(format!("k = {k} outside 1..={}", self.num_classes())));
        }
        Ok(())
    }
}

/// Fraction of masked nodes whose truth is among the first `k` labels.
pub fn topk_score(preds: &PredictionSet, truth: &[usize], mask: &[bool], k: usize) -> Result<f64> {
    preds.check_k(k)?;
    micro_f1(&preds.adjusted(truth, k), truth, mask)
}

/// Support-weighted F1 of the top-k adjusted predictions.
pub fn topk_weighted_f1(preds: &PredictionSet, truth: &[usize], mask: &[bool], k: usize) -> Result<f64> {
    preds.check_k(k)?;
    weighted_f1(&preds.adjusted(truth, k), truth, mask, preds.num_classes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub micro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub top_k: Vec<TopK>,
    pub per_class: Vec<ClassStats>,
    pub nodes: usize,
}

impl MetricsReport {
    /// `ks` larger than the class count are skipped.
    pub fn compute(preds: &PredictionSet, truth: &[usize], mask: &[bool], ks: &[usize]) -> Result<Self> {
        let c = preds.num_classes();
        let argmax = preds.argmax();
        let mut top_k = Vec::new();
        for &k in ks.iter().filter(|&&k| k <= c) {
            top_k.push(TopK {
                k,
                micro_f1: topk_score(preds, truth, mask, k)?,
                weighted_f1: topk_weighted_f1(preds, truth, mask, k)?,
            });
        }
        Ok(Self {
            micro_f1: micro_f1(&argmax, truth, mask)?,
            weighted_f1: weighted_f1(&argmax, truth, mask, c)?,
            top_k,
            per_class: per_class(&argmax, truth, mask, c)?,
            nodes: mask.iter().filter(|&&m| m).count(),
        })
    }

    pub fn top(&self, k: usize) -> Option<&TopK> {
        self.top_k.iter().find(|t| t.k == k)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_micro() {
        let all = [true; 3];
        assert_eq!(micro_f1(&[0, 1, 0], &[0, 1, 1], &all).unwrap(), 2.0 / 3.0);
        assert_eq!(micro_f1(&[2, 1], &[2, 1], &[true, true]).unwrap(), 1.0);
        assert!(matches!(micro_f1(&[0], &[0], &[false]), Err(Error::Metric(_))));
    }

    #[test]
    fn ranking_and_topk() {
        let p = PredictionSet::from_rows([vec![0.5, 0.3, 0.2]]);
        assert_eq!(topk_score(&p, &[1], &[true], 1).unwrap(), 0.0);
        assert_eq!(topk_score(&p, &[1], &[true], 2).unwrap(), 1.0);
        assert_eq!(topk_score(&p, &[2], &[true], 3).unwrap(), 1.0);
        assert!(topk_score(&p, &[1], &[true], 4).is_err());
        let tie = PredictionSet::from_rows([vec![0.25, 0.5, 0.25]]);
        assert_eq!(tie.ranked[0].iter().map(|r| r.0).collect::<Vec<_>>(), [1, 0, 2]);
    }

    #[test]
    fn weighted_equals_micro_when_balanced_and_symmetric() {
        // two classes, two instances each, one miss per class
        let pred = [0, 1, 1, 0];
        let truth = [0, 0, 1, 1];
        let m = [true; 4];
        assert_eq!(weighted_f1(&pred, &truth, &m, 2).unwrap(), micro_f1(&pred, &truth, &m).unwrap());
    }

    #[test]
    fn weighted_by_support() {
        // class 0: tp 2 fn 0 fp 1 -> 0.8; class 1: tp 0 fn 1 -> 0
        let w = weighted_f1(&[0, 0, 0], &[0, 0, 1], &[true; 3], 2).unwrap();
        assert!((w - 0.8 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[0.4, 0.6]);
        assert!((m - 0.5).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
    }
}
