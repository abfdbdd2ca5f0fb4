//! Label-stealing attacks over per-example cut-layer gradients and the
//! leakage metrics used to score them.
//!
//! Every attack here is a *strongest-attacker* audit: class centers are
//! computed from the true labels. Scores are continuous margins, with the
//! hard nearest-center assignment available separately.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::CutRecord;

/// Default number of equal-width histogram bins for TVD and KL estimates.
pub const DEFAULT_BINS: usize = 50;
/// Default additive smoothing for histogram KL.
pub const DEFAULT_KL_SMOOTHING: f64 = 1e-6;

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => {
                return Err(Error::InvalidParameter(format!("label {other} is not 0/1")));
            }
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    Ok((pos, neg))
}

/// ROC AUC in Mann-Whitney form: the probability that a random positive
/// outscores a random negative, with ties counted one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let (pos, neg) = class_counts(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Count in half-units so the result is exact for any tie pattern.
    let mut half_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        half_wins += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    let denom = 2 * pos as u128 * neg as u128;
    Ok(T::from_u128(half_wins).expect("count") / T::from_u128(denom).expect("count"))
}

/// AUC with the label assignment flipped when that scores higher.
pub fn leak_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<T> {
    let a = auc(scores, labels)?;
    Ok(a.max(T::one() - a))
}

/// Norm attack on a scalar cut layer: the score is `|g|`.
pub fn norm_attack<T: Scalar>(grads: &[T]) -> Vec<T> {
    grads.iter().map(|g| g.abs()).collect()
}

/// Per-class centers of a batch of scalar gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAudit<T> {
    pub grads: Vec<T>,
    pub labels: Vec<u8>,
    pub mean_neg: T,
    pub mean_pos: T,
    pub median_neg: T,
    pub median_pos: T,
}

impl<T: Scalar> GradientAudit<T> {
    pub fn new(grads: &[T], labels: &[u8]) -> Result<Self> {
        if grads.len() != labels.len() {
            return Err(Error::Shape("gradient and label counts differ".into()));
        }
        class_counts(labels)?;
        let split = |class: u8| -> Vec<T> {
            grads
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(&g, _)| g)
                .collect()
        };
        let (neg, pos) = (split(0), split(1));
        Ok(Self {
            grads: grads.to_vec(),
            labels: labels.to_vec(),
            mean_neg: mean(&neg),
            mean_pos: mean(&pos),
            median_neg: median(&neg),
            median_pos: median(&pos),
        })
    }
}

/// Margin `|g - c0| - |g - c1|`; non-negative means "closer to class 1".
fn center_margins<T: Scalar>(grads: &[T], c0: T, c1: T) -> Vec<T> {
    grads
        .iter()
        .map(|&g| (g - c0).abs() - (g - c1).abs())
        .collect()
}

/// Mean attack scores: distance to the class-0 mean minus distance to the class-1 mean.
pub fn mean_attack<T: Scalar>(audit: &GradientAudit<T>) -> Vec<T> {
    center_margins(&audit.grads, audit.mean_neg, audit.mean_pos)
}

/// Median attack scores, as [`mean_attack`] with class medians.
pub fn median_attack<T: Scalar>(audit: &GradientAudit<T>) -> Vec<T> {
    center_margins(&audit.grads, audit.median_neg, audit.median_pos)
}

/// Hard nearest-center labels; equidistant points go to class 1.
pub fn assign_by_margin<T: Scalar>(margins: &[T]) -> Vec<u8> {
    margins.iter().map(|&m| u8::from(m >= T::zero())).collect()
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().copied().sum::<T>() / T::from_count(v.len())
}

pub fn median<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / T::lit(2.0)
    }
}

/// Pooled mass left outside the equal-width range on each side.
pub const HIST_TAIL_FRACTION: f64 = 0.01;

/// Normalized histograms of two samples on a shared grid: `bins` equal-width
/// cells spanning the pooled order statistics at `HIST_TAIL_FRACTION` and
/// `1 - HIST_TAIL_FRACTION`, plus one cell for each tail beyond them.
fn paired_histograms<T: Scalar>(a: &[T], b: &[T], bins: usize) -> Result<(Vec<T>, Vec<T>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("histogram of an empty sample".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("histogram sample".into()));
    }
    let mut pooled: Vec<T> = a.iter().chain(b).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let last = (pooled.len() - 1) as f64;
    let lo = pooled[(HIST_TAIL_FRACTION * last).floor() as usize];
    let hi = pooled[((1.0 - HIST_TAIL_FRACTION) * last).ceil() as usize];
    let width = (hi - lo) / T::from_count(bins);
    let bin_of = |v: T| -> usize {
        if v < lo {
            0
        } else if v > hi {
            bins + 1
        } else if width <= T::zero() {
            1
        } else {
            1 + ((v - lo) / width).to_usize().unwrap_or(0).min(bins - 1)
        }
    };
    let hist = |s: &[T]| -> Vec<T> {
        let mut h = vec![T::zero(); bins + 2];
        for &v in s {
            h[bin_of(v)] += T::one();
        }
        let n = T::from_count(s.len());
        h.iter_mut().for_each(|x| *x /= n);
        h
    };
    Ok((hist(a), hist(b)))
}

/// Histogram estimate of the total variation distance between two samples.
pub fn tvd_hist<T: Scalar>(pos: &[T], neg: &[T], bins: usize) -> Result<T> {
    let (p, q) = paired_histograms(pos, neg, bins)?;
    let half = T::lit(0.5);
    let t = half * p.iter().zip(&q).map(|(&x, &y)| (x - y).abs()).sum::<T>();
    Ok(t.min(T::one()))
}

/// Histogram estimate of `KL(P||Q) + KL(Q||P)` with `smoothing` added to every bin mass.
pub fn sym_kl_hist<T: Scalar>(pos: &[T], neg: &[T], bins: usize, smoothing: T) -> Result<T> {
    if !(smoothing > T::zero()) {
        return Err(Error::InvalidParameter("KL smoothing must be positive".into()));
    }
    let (p, q) = paired_histograms(pos, neg, bins)?;
    let smooth = |h: Vec<T>| -> Vec<T> {
        let total = T::one() + smoothing * T::from_count(h.len());
        h.into_iter().map(|x| (x + smoothing) / total).collect()
    };
    let (p, q) = (smooth(p), smooth(q));
    Ok(p.iter()
        .zip(&q)
        .map(|(&x, &y)| (x - y) * (x / y).ln())
        .sum::<T>()
        .max(T::zero()))
}

/// Largest AUC any attack can reach when the symmetric KL between the
/// class-conditional gradient distributions is at most `eps`.
pub fn auc_bound<T: Scalar>(eps: T) -> Result<T> {
    if !(eps >= T::zero() && eps < T::lit(4.0)) {
        return Err(Error::InvalidParameter(format!(
            "KL budget must lie in [0, 4), got {eps}"
        )));
    }
    Ok(T::lit(0.5) + eps.sqrt() / T::lit(2.0) - eps / T::lit(8.0))
}

/// Between-class structure of the two components of a combined cut gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub gan_mean_pos: f64,
    pub gan_mean_neg: f64,
    pub penalty_mean_pos: f64,
    pub penalty_mean_neg: f64,
    /// `mean(gan | y=1) - mean(gan | y=0)`
    pub gan_diff: f64,
    /// `mean(penalty | y=1) - mean(penalty | y=0)`
    pub penalty_diff: f64,
    pub total_diff: f64,
    /// The two component differences point in opposite directions.
    pub opposite: bool,
}

/// `None` when the records do not carry both gradient components.
pub fn direction_report(records: &[CutRecord]) -> Option<DirectionReport> {
    let mut acc = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for r in records {
        let (g, p) = (r.grad_gan?, r.grad_penalty?);
        let c = usize::from(r.label == 1);
        acc[c][0] += g;
        acc[c][1] += p;
        acc[c][2] += r.grad_total;
        counts[c] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return None;
    }
    let m = |c: usize, k: usize| acc[c][k] / counts[c] as f64;
    let gan_diff = m(1, 0) - m(0, 0);
    let penalty_diff = m(1, 1) - m(0, 1);
    Some(DirectionReport {
        gan_mean_pos: m(1, 0),
        gan_mean_neg: m(0, 0),
        penalty_mean_pos: m(1, 1),
        penalty_mean_neg: m(0, 1),
        gan_diff,
        penalty_diff,
        total_diff: m(1, 2) - m(0, 2),
        opposite: gan_diff * penalty_diff < 0.0,
    })
}

/// Leakage audit of one run's cut-layer gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub leak_norm: f64,
    pub leak_mean: f64,
    pub leak_median: f64,
    pub tvd: f64,
    pub sym_kl: f64,
    /// AUC ceiling implied by `sym_kl`; 1.0 once the estimate leaves `[0, 4)`.
    pub bound: f64,
    pub direction: Option<DirectionReport>,
}

impl LeakReport {
    pub fn attacks(&self) -> [(&'static str, f64); 3] {
        [
            ("norm", self.leak_norm),
            ("mean", self.leak_mean),
            ("median", self.leak_median),
        ]
    }

    /// Attacks whose leak AUC exceeds the KL bound by more than `slack`.
    pub fn bound_violations(&self, slack: f64) -> Vec<&'static str> {
        self.attacks()
            .into_iter()
            .filter(|&(_, v)| v > self.bound + slack)
            .map(|(name, _)| name)
            .collect()
    }
}

/// Runs all three attacks and the distribution metrics on the total cut gradients.
pub fn leak_report(records: &[CutRecord]) -> Result<LeakReport> {
    let grads: Vec<f64> = records.iter().map(|r| r.grad_total).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let audit = GradientAudit::new(&grads, &labels)?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (&g, &l) in grads.iter().zip(&labels) {
            if l == 1 { pos.push(g) } else { neg.push(g) }
        }
        (pos, neg)
    };
    let sym_kl = sym_kl_hist(&pos, &neg, DEFAULT_BINS, DEFAULT_KL_SMOOTHING)?;
    Ok(LeakReport {
        leak_norm: leak_auc(&norm_attack(&grads), &labels)?,
        leak_mean: leak_auc(&mean_attack(&audit), &labels)?,
        leak_median: leak_auc(&median_attack(&audit), &labels)?,
        tvd: tvd_hist(&pos, &neg, DEFAULT_BINS)?,
        sym_kl,
        bound: auc_bound(sym_kl).unwrap_or(1.0),
        direction: direction_report(records),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.9, 0.95], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[3.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(auc(&[0.1f32, 0.2], &[0, 1]).unwrap() == 1.0f32);
    }

    #[test]
    fn leak_auc_flips() {
        // raw AUC 0.3 on a 10-pair layout
        let scores = [0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let labels = [1, 0, 0, 0, 1, 0, 0];
        let raw = auc(&scores, &labels).unwrap();
        assert!((raw - 0.3).abs() < 1e-15);
        assert!((leak_auc(&scores, &labels).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(leak_auc(&[1.0, 1.0], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn norm_attack_examples() {
        assert_eq!(norm_attack(&[-3.0, 0.1]), vec![3.0, 0.1]);
    }

    #[test]
    fn mean_attack_assignment() {
        let audit = GradientAudit::new(&[-1.0, -1.0, 1.0, 1.0, 0.9, 0.0], &[0, 0, 1, 1, 1, 0])
            .unwrap();
        let audit = GradientAudit {
            mean_neg: -1.0,
            mean_pos: 1.0,
            ..audit
        };
        let hard = assign_by_margin(&mean_attack(&audit));
        assert_eq!(hard[4], 1);
        // g = 0 is equidistant and goes to class 1
        assert_eq!(hard[5], 1);
    }

    #[test]
    fn median_resists_outlier() {
        // class 0: {0, 0, 0, 100} -> mean 25, median 0; class 1: {2, 2, 2} -> 2
        let grads = [0.0, 0.0, 0.0, 100.0, 2.0, 2.0, 2.0];
        let labels = [0, 0, 0, 0, 1, 1, 1];
        let audit = GradientAudit::new(&grads, &labels).unwrap();
        assert_eq!(audit.mean_neg, 25.0);
        assert_eq!(audit.median_neg, 0.0);
        let probe = GradientAudit {
            grads: vec![0.5],
            labels: vec![0],
            ..audit
        };
        // |0.5 - 25| > |0.5 - 2| under the mean rule, |0.5 - 0| < |0.5 - 2| under the median rule
        assert_eq!(assign_by_margin(&mean_attack(&probe)), vec![1]);
        assert_eq!(assign_by_margin(&median_attack(&probe)), vec![0]);
    }

    #[test]
    fn tvd_examples() {
        let a = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(tvd_hist(&a, &a, 50).unwrap(), 0.0);
        assert_eq!(tvd_hist(&[0.0, 0.1], &[0.9, 1.0], 50).unwrap(), 1.0);
        assert_eq!(tvd_hist(&[1.0, 1.0], &[1.0], 10).unwrap(), 0.0);
        assert!(tvd_hist::<f64>(&[], &[1.0], 10).is_err());
        assert!(tvd_hist(&[0.0], &[1.0], 1).is_err());

        // separated bulks at -1 and +1 with one far outlier in each class
        let mut pos: Vec<f64> = (0..300).map(|i| -1.0 - i as f64 * 1e-3).collect();
        let mut neg: Vec<f64> = (0..500).map(|i| 1.0 + i as f64 * 1e-3).collect();
        pos.push(-1000.0);
        neg.push(400.0);
        assert_eq!(tvd_hist(&pos, &neg, 50).unwrap(), 1.0);
    }

    #[test]
    fn sym_kl_examples() {
        let a = [0.1f64, 0.5, 0.7, 0.2];
        let b = [0.9f64, 0.3, 0.3];
        assert!(sym_kl_hist(&a, &a, 50, 1e-6).unwrap().abs() < 1e-12);
        let ab = sym_kl_hist(&a, &b, 50, 1e-6).unwrap();
        let ba = sym_kl_hist(&b, &a, 50, 1e-6).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn auc_bound_values() {
        assert_eq!(auc_bound(0.0).unwrap(), 0.5);
        assert_eq!(auc_bound(1.0).unwrap(), 0.875);
        assert!((auc_bound(4.0f64 - 1e-12).unwrap() - 1.0).abs() < 1e-6);
        assert!(auc_bound(4.0).is_err());
        assert!(auc_bound(-0.1).is_err());
    }

    fn record(label: u8, total: f64, gan: Option<f64>, pen: Option<f64>) -> CutRecord {
        CutRecord {
            index: 0,
            label,
            y_tilde: 0.5,
            y_hat: 0.5,
            grad_total: total,
            grad_gan: gan,
            grad_penalty: pen,
        }
    }

    #[test]
    fn direction_report_cancellation() {
        let recs: Vec<CutRecord> = [(1, 0.4), (1, 0.2), (0, -0.3), (0, -0.1)]
            .iter()
            .map(|&(l, g)| record(l, 0.0, Some(g), Some(-g)))
            .collect();
        let rep = direction_report(&recs).unwrap();
        assert!(rep.opposite);
        assert_eq!(rep.total_diff, 0.0);
        assert!((rep.gan_diff - 0.5).abs() < 1e-15);

        let penalty_only = vec![record(1, 0.1, None, Some(0.1)), record(0, -0.1, None, Some(-0.1))];
        assert!(direction_report(&penalty_only).is_none());
    }

    #[test]
    fn leak_report_on_separated_clusters() {
        let mut recs = Vec::new();
        for i in 0..20 {
            recs.push(record(1, -1.0 - 0.01 * i as f64, None, None));
            recs.push(record(0, 1.0 + 0.01 * i as f64, None, None));
        }
        let rep = leak_report(&recs).unwrap();
        assert_eq!(rep.leak_mean, 1.0);
        assert_eq!(rep.leak_median, 1.0);
        assert_eq!(rep.tvd, 1.0);
        assert_eq!(rep.bound, 1.0);
        assert!(rep.direction.is_none());
    }
}
