//! Report schema (`privaudit-report/1`) and file emission.
//!
//! Empirical ε estimates and analytic budgets live in structurally distinct
//! types: an [`EpsReport`] has no field that could mark it as a guarantee,
//! and the naive read-off is always tagged `diagnostic`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::AuditOutcome;
use crate::condense::InitKind;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{EpsEstimate, OperatingPoint, RocCurve};

pub const REPORT_SCHEMA: &str = "privaudit-report/1";

/// The critiqued single-point estimate, permanently tagged as diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveEps {
    pub value: f64,
    pub diagnostic: bool,
}

impl NaiveEps {
    pub fn new(value: f64) -> Self {
        NaiveEps {
            value,
            diagnostic: true,
        }
    }
}

/// Empirical ε estimate as it appears in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsReport {
    pub eps_lower_bound: f64,
    pub confidence: f64,
    pub operating_point: OperatingPoint,
    pub no_evidence: bool,
    pub naive: Option<NaiveEps>,
}

impl From<&EpsEstimate> for EpsReport {
    fn from(est: &EpsEstimate) -> Self {
        EpsReport {
            eps_lower_bound: est.eps_lower,
            confidence: est.confidence,
            operating_point: est.point,
            no_evidence: est.no_evidence,
            naive: est.eps_naive.map(NaiveEps::new),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolGapTrial {
    pub trial: usize,
    pub subset_advantage: f64,
    pub full_universe_advantage: f64,
    pub subset_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolGapResults {
    pub trials: Vec<ProtocolGapTrial>,
    pub mean_subset_advantage: f64,
    pub mean_full_universe_advantage: f64,
    pub full_universe_ci_half_width: f64,
    /// The step-5 computation gives r_ipc for the subset-oracle attacker.
    pub oracle_advantage_r_ipc: f64,
    /// The stated cap of twice that.
    pub advantage_cap_two_r_ipc: f64,
    pub example_roc_full_universe: RocCurve,
    pub example_scores: Vec<f64>,
    pub example_member_bits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmPropertiesResults {
    pub pairs_checked: usize,
    pub max_mean_relative_error: f64,
    pub centered_identity_exact: bool,
    pub t_replacement_bitwise_identical: bool,
    pub mean_gap_subset_mean: f64,
    pub mean_gap_subset_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub technique: String,
    pub test_accuracy: f64,
    pub test_accuracy_sd: f64,
    pub epsilon: Option<f64>,
    pub formal_guarantee: bool,
    pub budget_note: String,
    pub attack_advantage: f64,
    pub attack_advantage_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpsgdTableResults {
    pub rows: Vec<TableRow>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrRepeat {
    pub repeat: usize,
    pub eps_lower_bound: f64,
    pub naive: Option<NaiveEps>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsEstimationResults {
    pub true_epsilon: f64,
    pub repeats: Vec<RrRepeat>,
    pub lb_exceed_count: usize,
    pub naive_exceed_count: usize,
    pub mean_eps_lower_bound: f64,
    pub subgroup: SubgroupDisparity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupDisparity {
    pub global: EpsReport,
    pub subgroup: EpsReport,
    pub complement: EpsReport,
    pub subgroup_minus_global_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResults {
    pub dm_init: InitKind,
    pub dm: AuditOutcome,
    pub dpsgd_sigma: f64,
    pub dpsgd: AuditOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmPairCheck {
    pub table: usize,
    pub from: String,
    pub to: String,
    pub max_log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmCheckResults {
    pub pairs_checked: usize,
    pub max_log_ratio: f64,
    pub epsilon_bound: f64,
    pub worst_pairs: Vec<EmPairCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentResults {
    ProtocolGap(ProtocolGapResults),
    DmProperties(DmPropertiesResults),
    DpsgdTable(DpsgdTableResults),
    EpsEstimation(EpsEstimationResults),
    Audit(AuditResults),
    EmCheck(EmCheckResults),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub package_version: String,
    pub wall_time_secs: f64,
}

/// Schema-versioned experiment report; the config (seed included) is echoed
/// verbatim so each report is re-runnable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config: ExperimentConfig,
    pub results: ExperimentResults,
    pub invariant_violations: Vec<String>,
    pub provenance: ReportProvenance,
}

impl Report {
    pub fn new(config: ExperimentConfig, results: ExperimentResults) -> Self {
        Report {
            schema: REPORT_SCHEMA.into(),
            config,
            results,
            invariant_violations: Vec::new(),
            provenance: ReportProvenance {
                package_version: env!("CARGO_PKG_VERSION").into(),
                wall_time_secs: 0.0,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialize(e.to_string()))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the JSON report plus per-experiment CSV tables and ROC point files.
/// Returns every path written.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    let json_path = out_dir.join("report.json");
    write_file(&json_path, &report.to_json()?)?;
    written.push(json_path);

    match &report.results {
        ExperimentResults::ProtocolGap(r) => {
            let mut csv = String::from("trial,subset_advantage,full_universe_advantage,subset_size\n");
            for t in &r.trials {
                csv.push_str(&format!(
                    "{},{:?},{:?},{}\n",
                    t.trial, t.subset_advantage, t.full_universe_advantage, t.subset_size
                ));
            }
            let p = out_dir.join("protocol_gap_trials.csv");
            write_file(&p, &csv)?;
            written.push(p);

            let mut roc = Vec::new();
            crate::metrics::write_roc_csv(&mut roc, &r.example_roc_full_universe)?;
            let p = out_dir.join("roc_full_universe.csv");
            write_file(&p, &String::from_utf8_lossy(&roc))?;
            written.push(p);

            let mut scores = String::from("id,score,member_bit\n");
            for (id, (s, b)) in r
                .example_scores
                .iter()
                .zip(&r.example_member_bits)
                .enumerate()
            {
                scores.push_str(&format!("{id},{s:?},{}\n", u8::from(*b)));
            }
            let p = out_dir.join("scores_trial0.csv");
            write_file(&p, &scores)?;
            written.push(p);
        }
        ExperimentResults::DpsgdTable(r) => {
            let mut csv = String::from(
                "technique,test_accuracy,dp_epsilon,formal_guarantee,attack_advantage\n",
            );
            for row in &r.rows {
                csv.push_str(&format!(
                    "{},{:?},{},{},{:?}\n",
                    row.technique,
                    row.test_accuracy,
                    row.epsilon.map(|e| format!("{e:?}")).unwrap_or_else(|| "n/a".into()),
                    if row.formal_guarantee { "yes" } else { "no" },
                    row.attack_advantage
                ));
            }
            let p = out_dir.join("dpsgd_table.csv");
            write_file(&p, &csv)?;
            written.push(p);
        }
        ExperimentResults::EpsEstimation(r) => {
            let mut csv = String::from("repeat,eps_lower_bound,eps_naive_diagnostic\n");
            for rep in &r.repeats {
                csv.push_str(&format!(
                    "{},{:?},{}\n",
                    rep.repeat,
                    rep.eps_lower_bound,
                    rep.naive
                        .as_ref()
                        .map(|n| format!("{:?}", n.value))
                        .unwrap_or_else(|| "undefined".into())
                ));
            }
            let p = out_dir.join("rr_repeats.csv");
            write_file(&p, &csv)?;
            written.push(p);
        }
        ExperimentResults::Audit(r) => {
            for (name, outcome) in [("dm", &r.dm), ("dpsgd", &r.dpsgd)] {
                let mut buf = Vec::new();
                crate::audit::write_audit_scores_csv(&mut buf, outcome)?;
                let p = out_dir.join(format!("audit_{name}_scores.csv"));
                write_file(&p, &String::from_utf8_lossy(&buf))?;
                written.push(p);
            }
        }
        ExperimentResults::EmCheck(r) => {
            let mut csv = String::from("table,from,to,max_log_ratio\n");
            for pair in &r.worst_pairs {
                csv.push_str(&format!(
                    "{},{},{},{:?}\n",
                    pair.table, pair.from, pair.to, pair.max_log_ratio
                ));
            }
            let p = out_dir.join("em_pairs.csv");
            write_file(&p, &csv)?;
            written.push(p);
        }
        ExperimentResults::DmProperties(_) => {}
    }
    Ok(written)
}
