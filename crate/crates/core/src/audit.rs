//! Worst-case distinguishing experiments on neighboring datasets D and
//! D' = D ∪ {target}: run a pipeline many times on each side, score a
//! distinguisher statistic on the target example, and report detection rate
//! plus a confidence-backed ε lower bound.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::accountant::{dpsgd_epsilon, AccountingParams, PrivacyBudget};
use crate::attack::select_threshold_max_advantage;
use crate::data::{AuditPair, Dataset};
use crate::error::{Error, Result};
use crate::learners::evaluate_one;
use crate::metrics::{clopper_pearson, cp_upper, eps_lower_bound};
use crate::parallel::run_indexed;
use crate::pipeline::{condense_stage, train_stage, CondenserSpec, TrainerSpec};
use crate::seed;
use crate::stats::{kahan_sum, l2_norm};

const SIDE_D_TAG: u64 = 0x61756430;
const SIDE_DPRIME_TAG: u64 = 0x61756431;

// Floating-point slack for boundary cases of the trade-off inequalities.
const REGION_TOL: f64 = 1e-12;

/// Distinguisher statistic computed per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatistic {
    /// Projection of the condensed-set mean onto the D -> D' mean shift;
    /// needs a condenser, no trainer.
    MeanProjection,
    /// Negative loss of the trained model on the target example.
    TargetLoss,
}

/// Pipeline under audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditPipeline {
    pub condenser: CondenserSpec,
    pub trainer: Option<TrainerSpec>,
    pub statistic: AuditStatistic,
}

impl AuditPipeline {
    pub fn validate(&self) -> Result<()> {
        match self.statistic {
            AuditStatistic::MeanProjection => {
                if matches!(self.condenser, CondenserSpec::None) {
                    return Err(Error::Config(
                        "mean-projection statistic needs a condensation stage".into(),
                    ));
                }
            }
            AuditStatistic::TargetLoss => {
                if self.trainer.is_none() {
                    return Err(Error::Config(
                        "target-loss statistic needs a trainer".into(),
                    ));
                }
            }
        }
        if matches!(self.condenser, CondenserSpec::None) && self.trainer.is_none() {
            return Err(Error::Config("pipeline is empty".into()));
        }
        Ok(())
    }

    /// Budget of the mechanism under audit, when it has one.
    pub fn budget(&self, delta_hint: f64) -> Result<Option<PrivacyBudget>> {
        match self.trainer {
            Some(TrainerSpec::DpSgd(h)) if h.noise_multiplier > 0.0 => {
                let (eps, _) =
                    dpsgd_epsilon(h.sample_rate, h.noise_multiplier, h.steps, h.delta)?;
                Ok(Some(PrivacyBudget {
                    epsilon: Some(eps),
                    delta: h.delta,
                    mechanism: format!(
                        "subsampled_gaussian(sigma={}, q={}, steps={})",
                        h.noise_multiplier, h.sample_rate, h.steps
                    ),
                    accounting: Some(AccountingParams {
                        sigma: h.noise_multiplier,
                        sample_rate: h.sample_rate,
                        steps: h.steps,
                    }),
                }))
            }
            Some(TrainerSpec::DpSgd(_)) => Ok(Some(PrivacyBudget::non_private("dpsgd sigma=0"))),
            _ => {
                let _ = delta_hint;
                Ok(None)
            }
        }
    }
}

/// Verdict of a DP trade-off check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpVerdict {
    Consistent,
    Violated,
}

/// Check both trade-off constraints of (ε, δ)-DP:
/// 1-FNR <= e^ε·FPR + δ and 1-FPR <= e^ε·FNR + δ.
pub fn dp_region_check(fpr: f64, fnr: f64, epsilon: f64, delta: f64) -> DpVerdict {
    let e = epsilon.exp();
    let ok = (1.0 - fnr) <= e * fpr + delta + REGION_TOL
        && (1.0 - fpr) <= e * fnr + delta + REGION_TOL;
    if ok {
        DpVerdict::Consistent
    } else {
        DpVerdict::Violated
    }
}

/// CP-corrected region check: each error rate is replaced by its one-sided
/// upper confidence bound at level 1 - (1-confidence)/2, so a genuinely
/// ε-DP mechanism passes with probability at least `confidence`.
pub fn dp_region_check_cp(
    fp_count: usize,
    fn_count: usize,
    n_d: usize,
    n_d_prime: usize,
    epsilon: f64,
    delta: f64,
    confidence: f64,
) -> Result<DpVerdict> {
    let side_conf = 1.0 - (1.0 - confidence) / 2.0;
    let fpr_hi = cp_upper(fp_count, n_d, side_conf)?;
    let fnr_hi = cp_upper(fn_count, n_d_prime, side_conf)?;
    Ok(dp_region_check(fpr_hi, fnr_hi, epsilon, delta))
}

/// Result of a neighboring-dataset audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub trials_per_side: usize,
    pub calibration_per_side: usize,
    pub evaluation_per_side: usize,
    /// Per-trial distinguisher scores (calibration then evaluation).
    pub scores_d: Vec<f64>,
    pub scores_d_prime: Vec<f64>,
    /// Chosen on the calibration half only.
    pub threshold: f64,
    /// Accuracy distinguishing the two sides over the evaluation half.
    pub detection_rate: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub fpr_ci: (f64, f64),
    pub fnr_ci: (f64, f64),
    pub eps_lower: f64,
    pub confidence: f64,
    pub budget: Option<PrivacyBudget>,
    pub dp_check: Option<DpVerdict>,
}

fn mean_projection_axis(pair: &AuditPair) -> Result<(Vec<f64>, Vec<f64>)> {
    let mean_d = pair.d.feature_mean();
    let mean_dp = pair.d_prime.feature_mean();
    let diff: Vec<f64> = mean_dp.iter().zip(&mean_d).map(|(a, b)| a - b).collect();
    let norm = l2_norm(&diff);
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "target example does not shift the mean".into(),
        ));
    }
    let axis: Vec<f64> = diff.iter().map(|v| v / norm).collect();
    let midpoint: Vec<f64> = mean_dp
        .iter()
        .zip(&mean_d)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok((axis, midpoint))
}

fn trial_statistic(
    pipeline: &AuditPipeline,
    side_data: &Dataset,
    pair: &AuditPair,
    axis_mid: &Option<(Vec<f64>, Vec<f64>)>,
    trial_seed: u64,
) -> Result<f64> {
    let condensed = condense_stage(&pipeline.condenser, side_data, trial_seed)?;
    match pipeline.statistic {
        AuditStatistic::MeanProjection => {
            let (axis, midpoint) = axis_mid.as_ref().expect("validated");
            let s = condensed.as_ref().expect("validated: condenser present");
            let mean_s = s.data.feature_mean();
            Ok(kahan_sum(
                mean_s
                    .iter()
                    .zip(midpoint)
                    .zip(axis)
                    .map(|((m, c), a)| (m - c) * a),
            ))
        }
        AuditStatistic::TargetLoss => {
            let train_set = condensed.as_ref().map(|c| &c.data).unwrap_or(side_data);
            let trainer = pipeline.trainer.as_ref().expect("validated");
            let model = train_stage(trainer, train_set, trial_seed)?;
            let rec = evaluate_one(&model, &pair.target_features, pair.target_class)?;
            Ok(-rec.loss)
        }
    }
}

/// Train `trials_per_side` pipelines on each side of the pair, split each
/// side into disjoint calibration/evaluation halves, pick the threshold on
/// calibration, and report evaluation rates with CP intervals and the
/// confidence-backed ε lower bound.
pub fn run_audit(
    pipeline: &AuditPipeline,
    pair: &AuditPair,
    trials_per_side: usize,
    confidence: f64,
    audit_seed: u64,
    jobs: usize,
) -> Result<AuditOutcome> {
    pipeline.validate()?;
    if trials_per_side < 20 {
        return Err(Error::Validation(format!(
            "need at least 20 trials per side, got {trials_per_side}"
        )));
    }
    let axis_mid = match pipeline.statistic {
        AuditStatistic::MeanProjection => Some(mean_projection_axis(pair)?),
        AuditStatistic::TargetLoss => None,
    };

    let run_side = |data: &Dataset, tag: u64| -> Result<Vec<f64>> {
        let results = run_indexed(trials_per_side, jobs, |t| {
            trial_statistic(
                pipeline,
                data,
                pair,
                &axis_mid,
                seed::derive2(audit_seed, tag, t as u64),
            )
        });
        results.into_iter().collect()
    };
    let scores_d = run_side(&pair.d, SIDE_D_TAG)?;
    let scores_d_prime = run_side(&pair.d_prime, SIDE_DPRIME_TAG)?;

    let calib = trials_per_side / 2;
    let n_eval = trials_per_side - calib;

    let mut calib_scores: Vec<f64> = Vec::with_capacity(2 * calib);
    let mut calib_bits: Vec<bool> = Vec::with_capacity(2 * calib);
    calib_scores.extend_from_slice(&scores_d[..calib]);
    calib_bits.extend(std::iter::repeat(false).take(calib));
    calib_scores.extend_from_slice(&scores_d_prime[..calib]);
    calib_bits.extend(std::iter::repeat(true).take(calib));
    let threshold = select_threshold_max_advantage(&calib_scores, &calib_bits);

    let fp_count = scores_d[calib..].iter().filter(|&&s| s > threshold).count();
    let tp_count = scores_d_prime[calib..]
        .iter()
        .filter(|&&s| s > threshold)
        .count();
    let fn_count = n_eval - tp_count;
    let fpr = fp_count as f64 / n_eval as f64;
    let fnr = fn_count as f64 / n_eval as f64;
    let detection_rate = (tp_count + (n_eval - fp_count)) as f64 / (2 * n_eval) as f64;
    let eps_est = eps_lower_bound(tp_count, fp_count, n_eval, n_eval, confidence)?;

    let budget = pipeline.budget(0.0)?;
    let dp_check = match &budget {
        Some(b) => b.epsilon.map(|eps| {
            dp_region_check_cp(fp_count, fn_count, n_eval, n_eval, eps, b.delta, confidence)
        }),
        None => None,
    };
    let dp_check = match dp_check {
        Some(r) => Some(r?),
        None => None,
    };

    Ok(AuditOutcome {
        trials_per_side,
        calibration_per_side: calib,
        evaluation_per_side: n_eval,
        scores_d,
        scores_d_prime,
        threshold,
        detection_rate,
        fpr,
        fnr,
        fpr_ci: clopper_pearson(fp_count, n_eval, confidence)?,
        fnr_ci: clopper_pearson(fn_count, n_eval, confidence)?,
        eps_lower: eps_est.eps_lower,
        confidence,
        budget,
        dp_check,
    })
}

/// Per-trial scores as CSV (side, trial, score).
pub fn write_audit_scores_csv<W: Write>(mut writer: W, outcome: &AuditOutcome) -> Result<()> {
    writeln!(writer, "side,trial,score").map_err(|e| Error::Serialize(e.to_string()))?;
    for (t, s) in outcome.scores_d.iter().enumerate() {
        writeln!(writer, "d,{t},{s:?}").map_err(|e| Error::Serialize(e.to_string()))?;
    }
    for (t, s) in outcome.scores_d_prime.iter().enumerate() {
        writeln!(writer, "d_prime,{t},{s:?}").map_err(|e| Error::Serialize(e.to_string()))?;
    }
    Ok(())
}
