//! Ranking metrics for multi-label predictions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Clip-level predictions with binary ground truth, both `[M, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub clip_ids: Vec<String>,
    pub scores: Tensor,
    pub targets: Tensor,
}

impl PredictionSet {
    pub fn new(clip_ids: Vec<String>, scores: Tensor, targets: Tensor) -> Result<Self> {
        let (m, c) = match *scores.shape() {
            [m, c] => (m, c),
            _ => return Err(dim_err("PredictionSet", format!("scores must be [M, C], got {:?}", scores.shape()))),
        };
        if targets.shape() != [m, c] || clip_ids.len() != m {
            return Err(dim_err(
                "PredictionSet",
                format!("scores {:?}, targets {:?}, {} ids", scores.shape(), targets.shape(), clip_ids.len()),
            ));
        }
        if scores.data().iter().any(|s| !s.is_finite()) {
            return Err(Error::Argument("scores must be finite".into()));
        }
        if targets.data().iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Argument("targets must be binary".into()));
        }
        Ok(PredictionSet { clip_ids, scores, targets })
    }

    pub fn num_classes(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scores and binary targets of one class.
    pub fn column(&self, class: usize) -> (Vec<f32>, Vec<bool>) {
        let c = self.num_classes();
        let scores = self.scores.data().iter().skip(class).step_by(c).copied().collect();
        let targets = self.targets.data().iter().skip(class).step_by(c).map(|&t| t == 1.0).collect();
        (scores, targets)
    }
}

/// Indices ordered by descending score; ties keep input order.
fn descending(scores: &[f32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average precision: mean over positives of the precision at the rank of
/// each positive. `None` when there are no positives.
pub fn average_precision(scores: &[f32], targets: &[bool]) -> Option<f64> {
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 || scores.len() != targets.len() {
        return None;
    }
    let mut hits = 0usize;
    let mut total = 0.0f64;
    for (rank, &i) in descending(scores).iter().enumerate() {
        if targets[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / positives as f64)
}

/// Per-class AP; classes without positives are `None`.
pub fn per_class_ap(preds: &PredictionSet) -> Vec<Option<f64>> {
    (0..preds.num_classes())
        .map(|c| {
            let (s, t) = preds.column(c);
            average_precision(&s, &t)
        })
        .collect()
}

/// Balanced mAP: unweighted mean of the defined per-class APs.
pub fn mean_ap(preds: &PredictionSet) -> Result<f64> {
    mean_defined(&per_class_ap(preds)).ok_or_else(|| Error::Argument("no class has a positive example".into()))
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// ROC-AUC via the rank-sum statistic with average ranks for ties. `None`
/// unless both positives and negatives are present.
pub fn roc_auc(scores: &[f32], targets: &[bool]) -> Option<f64> {
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != targets.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| targets[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

pub fn mean_auc(preds: &PredictionSet) -> Result<f64> {
    let aucs: Vec<Option<f64>> = (0..preds.num_classes())
        .map(|c| {
            let (s, t) = preds.column(c);
            roc_auc(&s, &t)
        })
        .collect();
    mean_defined(&aucs).ok_or_else(|| Error::Argument("no class has both positives and negatives".into()))
}

/// Inverse of the standard normal CDF.
pub fn probit(p: f64) -> f64 {
    // Acklam's rational approximation, then one Halley step against erfc.
    const A: [f64; 6] = [
        -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
        1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
        6.680131188771972e+01, -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
        -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// Clamp keeping degenerate AUCs away from the probit's poles.
pub const AUC_CLAMP: f64 = 1e-6;

/// `sqrt(2) * probit(auc)` with the AUC clamped to `[1e-6, 1 - 1e-6]`.
pub fn d_prime_from_auc(auc: f64) -> f64 {
    core::f64::consts::SQRT_2 * probit(auc.clamp(AUC_CLAMP, 1.0 - AUC_CLAMP))
}

/// d' from the mean per-class ROC-AUC.
pub fn d_prime(preds: &PredictionSet) -> Result<f64> {
    Ok(d_prime_from_auc(mean_auc(preds)?))
}
