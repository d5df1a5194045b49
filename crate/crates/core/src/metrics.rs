//! Ranking metrics for OOD detection with in-distribution as the positive class,
//! plus a histogram overlap estimate between the two score distributions.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Which side is treated as positive by [`aupr_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Positive {
    #[default]
    Id,
    Ood,
}

fn check(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::EmptyScores);
    }
    if id.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    Ok(())
}

/// Scores tagged with whether they are positive, sorted descending.
fn ranked(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (ID, OOD) pairs where the ID score is higher, ties counting one half.
pub fn auc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let mut sorted_ood = ood.to_vec();
    sorted_ood.sort_by(f64::total_cmp);
    // Count pairs in units of half a pair to keep the sum exact.
    let mut halves: u128 = 0;
    for &s in id {
        let below = sorted_ood.partition_point(|&o| o < s);
        let not_above = sorted_ood.partition_point(|&o| o <= s);
        halves += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(halves as f64 / (2.0 * id.len() as f64 * ood.len() as f64))
}

/// Area under the precision-recall curve with ID positive.
pub fn aupr(id: &[f64], ood: &[f64]) -> Result<f64> {
    aupr_with(id, ood, Positive::Id)
}

/// Step-wise PR area: thresholds sweep the distinct scores in descending
/// order (ties share a threshold) and each recall increment is weighted by
/// the precision at that threshold.
pub fn aupr_with(id: &[f64], ood: &[f64], positive: Positive) -> Result<f64> {
    check(id, ood)?;
    let all = match positive {
        Positive::Id => ranked(id, ood),
        Positive::Ood => {
            let neg_id: Vec<f64> = id.iter().map(|s| -s).collect();
            let neg_ood: Vec<f64> = ood.iter().map(|s| -s).collect();
            ranked(&neg_ood, &neg_id)
        }
    };
    let total_pos = all.iter().filter(|e| e.1).count() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// False-positive rate at 95% true-positive rate with ID positive. The
/// threshold is the largest `t` with at least 95% of ID scores `>= t`; the
/// result is the fraction of OOD scores `>= t`.
pub fn fpr95(id: &[f64], ood: &[f64]) -> Result<f64> {
    check(id, ood)?;
    let mut sorted = id.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let needed = (95 * id.len()).div_ceil(100).max(1);
    let t = sorted[needed - 1];
    let fp = ood.iter().filter(|&&o| o >= t).count();
    Ok(fp as f64 / ood.len() as f64)
}

pub const DEFAULT_OVERLAP_BINS: usize = 50;

/// Intersection of the two normalized histograms over the shared score range.
pub fn overlap(id: &[f64], ood: &[f64], bins: usize) -> Result<f64> {
    check(id, ood)?;
    let bins = bins.max(1);
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let hi = id.iter().chain(ood).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let b = if width > 0.0 {
                (((x - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            h[b] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let (p, q) = (hist(id), hist(ood));
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum::<f64>().min(1.0))
}

/// All four detection numbers for one score set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub auc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    pub overlap: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl DetectionMetrics {
    pub fn compute(id: &[f64], ood: &[f64]) -> Result<Self> {
        Ok(Self {
            auc: auc(id, ood)?,
            aupr: aupr(id, ood)?,
            fpr95: fpr95(id, ood)?,
            overlap: overlap(id, ood, DEFAULT_OVERLAP_BINS)?,
            n_id: id.len(),
            n_ood: ood.len(),
        })
    }
}
