//! ROC machinery, attack advantage, exact binomial confidence intervals,
//! confidence-backed ε lower bounds, and the naive ε̂ point estimate the
//! harness reports as a diagnostic only.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::beta_inv;

/// One ROC operating point. `threshold` is the score at which the point was
/// generated (classify positive iff score >= threshold); tied scores are
/// grouped into a single step. The (0,0) anchor carries `f64::MAX`, a
/// threshold above every finite score, so curves survive JSON round trips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
}

/// All-thresholds ROC sweep with trapezoidal AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Build the ROC curve of `scores` against binary membership ground truth.
pub fn roc_curve(scores: &[f64], member_bits: &[bool]) -> Result<RocCurve> {
    if scores.len() != member_bits.len() {
        return Err(Error::Validation(format!(
            "{} scores vs {} labels",
            scores.len(),
            member_bits.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    let n_pos = member_bits.iter().filter(|&&b| b).count();
    let n_neg = member_bits.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation(
            "ROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::MAX,
        tp: 0,
        fp: 0,
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let score = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == score {
            if member_bits[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: score,
            tp,
            fp,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5;
    }
    Ok(RocCurve {
        points,
        auc,
        n_pos,
        n_neg,
    })
}

/// 2 x (success rate - 50%); negative values are reported as-is.
pub fn attack_advantage(success_rate: f64) -> f64 {
    2.0 * (success_rate - 0.5)
}

/// Exact (Clopper-Pearson) two-sided binomial interval via Beta quantiles.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    check_cp_args(k, n, confidence)?;
    let alpha = 1.0 - confidence;
    let lo = if k == 0 {
        0.0
    } else {
        beta_inv(alpha / 2.0, k as f64, (n - k) as f64 + 1.0)
    };
    let hi = if k == n {
        1.0
    } else {
        beta_inv(1.0 - alpha / 2.0, k as f64 + 1.0, (n - k) as f64)
    };
    Ok((lo, hi))
}

/// One-sided lower confidence bound: P(p >= bound) >= confidence.
pub fn cp_lower(k: usize, n: usize, confidence: f64) -> Result<f64> {
    check_cp_args(k, n, confidence)?;
    Ok(if k == 0 {
        0.0
    } else {
        beta_inv(1.0 - confidence, k as f64, (n - k) as f64 + 1.0)
    })
}

/// One-sided upper confidence bound: P(p <= bound) >= confidence.
pub fn cp_upper(k: usize, n: usize, confidence: f64) -> Result<f64> {
    check_cp_args(k, n, confidence)?;
    Ok(if k == n {
        1.0
    } else {
        beta_inv(confidence, k as f64 + 1.0, (n - k) as f64)
    })
}

fn check_cp_args(k: usize, n: usize, confidence: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Validation("need at least one trial".into()));
    }
    if k > n {
        return Err(Error::Validation(format!("k={k} exceeds n={n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Validation(format!(
            "confidence must be in (0,1), got {confidence}"
        )));
    }
    Ok(())
}

/// The counts behind an ε estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tp: usize,
    pub fp: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Score threshold behind (tp, fp); absent when the counts came from an
    /// external tally rather than a curve point.
    pub threshold: Option<f64>,
}

/// Confidence-backed ε lower bound plus the naive read-off at the same
/// operating point. `eps_naive` is a diagnostic, never a guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsEstimate {
    pub eps_lower: f64,
    pub eps_naive: Option<f64>,
    pub confidence: f64,
    pub point: OperatingPoint,
    /// Set when the lower CP bound collapses to zero (no evidence).
    pub no_evidence: bool,
}

/// ε_lb = ln(CP_lower(TP)/CP_upper(FP)) at one operating point, floored at
/// zero; one-sided bounds at the stated confidence each.
pub fn eps_lower_bound(
    tp: usize,
    fp: usize,
    n_pos: usize,
    n_neg: usize,
    confidence: f64,
) -> Result<EpsEstimate> {
    let tpr_lo = cp_lower(tp, n_pos, confidence)?;
    let fpr_hi = cp_upper(fp, n_neg, confidence)?;
    let (eps_lower, no_evidence) = if tpr_lo <= 0.0 {
        (0.0, true)
    } else {
        ((tpr_lo / fpr_hi).ln().max(0.0), false)
    };
    let tpr_hat = tp as f64 / n_pos as f64;
    let fpr_hat = fp as f64 / n_neg as f64;
    let eps_naive = if fpr_hat > 0.0 && tpr_hat > 0.0 {
        Some((tpr_hat / fpr_hat).ln())
    } else {
        None
    };
    Ok(EpsEstimate {
        eps_lower,
        eps_naive,
        confidence,
        point: OperatingPoint {
            tp,
            fp,
            n_pos,
            n_neg,
            threshold: None,
        },
        no_evidence,
    })
}

/// The critiqued single-point read-off: max over ROC points of
/// ln(TPR/FPR), skipping FPR = 0 points. `None` when no point qualifies.
pub fn eps_point_estimate_naive(curve: &RocCurve) -> Option<f64> {
    curve
        .points
        .iter()
        .filter(|p| p.fp > 0 && p.tp > 0)
        .map(|p| (p.tpr / p.fpr).ln())
        .fold(None, |best, v| match best {
            None => Some(v),
            Some(b) => Some(b.max(v)),
        })
}

/// Scan the curve for the operating point with the best confidence-backed
/// bound; the naive companion is the curve-wide max read-off.
pub fn eps_estimates(curve: &RocCurve, confidence: f64) -> Result<EpsEstimate> {
    let mut best: Option<EpsEstimate> = None;
    for p in &curve.points {
        let mut est = eps_lower_bound(p.tp, p.fp, curve.n_pos, curve.n_neg, confidence)?;
        est.point.threshold = Some(p.threshold);
        let better = match &best {
            None => true,
            Some(b) => est.eps_lower > b.eps_lower,
        };
        if better {
            best = Some(est);
        }
    }
    let mut est = best.expect("curve has at least the (0,0) point");
    est.eps_naive = eps_point_estimate_naive(curve);
    Ok(est)
}

/// Metrics for one subgroup; single-class groups carry no curve and are
/// flagged instead of failing the whole computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: usize,
    pub size: usize,
    pub roc: Option<RocCurve>,
    pub eps: Option<EpsEstimate>,
    pub flagged_single_class: bool,
}

/// Recompute ROC and ε bounds within each group of a partition.
pub fn subgroup_metrics(
    scores: &[f64],
    member_bits: &[bool],
    group_ids: &[usize],
    confidence: f64,
) -> Result<Vec<GroupMetrics>> {
    if scores.len() != member_bits.len() || scores.len() != group_ids.len() {
        return Err(Error::Validation("scores, bits and groups must align".into()));
    }
    if scores.is_empty() {
        return Err(Error::Validation("empty input".into()));
    }
    let max_group = *group_ids.iter().max().expect("nonempty");
    let mut out = Vec::with_capacity(max_group + 1);
    for g in 0..=max_group {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| group_ids[i] == g).collect();
        let g_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let g_bits: Vec<bool> = idx.iter().map(|&i| member_bits[i]).collect();
        let pos = g_bits.iter().filter(|&&b| b).count();
        if idx.is_empty() || pos == 0 || pos == idx.len() {
            out.push(GroupMetrics {
                group: g,
                size: idx.len(),
                roc: None,
                eps: None,
                flagged_single_class: true,
            });
            continue;
        }
        let roc = roc_curve(&g_scores, &g_bits)?;
        let eps = eps_estimates(&roc, confidence)?;
        out.push(GroupMetrics {
            group: g,
            size: idx.len(),
            roc: Some(roc),
            eps: Some(eps),
            flagged_single_class: false,
        });
    }
    Ok(out)
}

/// Emit ROC points as CSV (fpr, tpr, threshold).
pub fn write_roc_csv<W: Write>(mut writer: W, curve: &RocCurve) -> Result<()> {
    writeln!(writer, "fpr,tpr,threshold").map_err(|e| Error::Serialize(e.to_string()))?;
    for p in &curve.points {
        writeln!(writer, "{:?},{:?},{:?}", p.fpr, p.tpr, p.threshold)
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    Ok(())
}
