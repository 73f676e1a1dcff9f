//! Experiment configuration: TOML key/value files checked strictly against
//! the published schema (unknown keys are rejected).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::UniverseSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ProtocolGap,
    DmProperties,
    DpsgdTable,
    EpsEstimation,
    Audit,
    EmCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ProtocolGap,
        ExperimentKind::DmProperties,
        ExperimentKind::DpsgdTable,
        ExperimentKind::EpsEstimation,
        ExperimentKind::Audit,
        ExperimentKind::EmCheck,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ProtocolGap => "protocol_gap",
            ExperimentKind::DmProperties => "dm_properties",
            ExperimentKind::DpsgdTable => "dpsgd_table",
            ExperimentKind::EpsEstimation => "eps_estimation",
            ExperimentKind::Audit => "audit",
            ExperimentKind::EmCheck => "em_check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub separation: f64,
    pub noise: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            n: 2000,
            d: 8,
            k: 2,
            separation: 6.0,
            noise: 1.0,
        }
    }
}

impl UniverseConfig {
    pub fn to_spec(self, seed: u64) -> UniverseSpec {
        UniverseSpec {
            n: self.n,
            d: self.d,
            k: self.k,
            separation: self.separation,
            noise: self.noise,
            seed,
        }
    }
}

/// DP-SGD rows of the comparison table. Either pin `sigma` or let the
/// accountant calibrate it to `target_epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpsgdConfig {
    pub target_epsilon: f64,
    pub sigma: Option<f64>,
    pub clip: f64,
    pub sample_rate: f64,
    pub steps: usize,
    pub lr: f64,
    pub delta: f64,
    /// Noise multiplier for the deliberately under-noised row.
    pub weak_sigma: f64,
}

impl Default for DpsgdConfig {
    fn default() -> Self {
        DpsgdConfig {
            target_epsilon: 8.0,
            sigma: None,
            clip: 1.0,
            sample_rate: 0.25,
            steps: 60,
            lr: 0.2,
            delta: 1e-5,
            weak_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Universe size behind the neighboring pair.
    pub n: usize,
    /// Distance of the planted target from its class mean, in noise units.
    pub target_offset_sigmas: f64,
    /// DM condensation ratio for the mean-projection audit.
    pub dm_r_ipc: f64,
    /// Accountant target for the DP-SGD side of the audit.
    pub dp_target_epsilon: f64,
    pub dp_steps: usize,
    pub dp_clip: f64,
    pub dp_lr: f64,
    pub dp_delta: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n: 240,
            target_offset_sigmas: 6.0,
            dm_r_ipc: 0.1,
            dp_target_epsilon: 1.0,
            dp_steps: 30,
            dp_clip: 1.0,
            dp_lr: 0.5,
            dp_delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsConfig {
    /// Ground-truth ε of the randomized-response mechanism under attack.
    pub true_epsilon: f64,
    pub observations: usize,
    /// Size and separable fraction of the subgroup-disparity construction.
    pub subgroup_n: usize,
    pub subgroup_fraction: f64,
}

impl Default for EpsConfig {
    fn default() -> Self {
        EpsConfig {
            true_epsilon: 3f64.ln(),
            observations: 1000,
            subgroup_n: 2000,
            subgroup_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    /// Size of the example space the datasets draw from.
    pub space_values: usize,
    /// Maximum dataset size enumerated.
    pub max_size: usize,
    pub grid_points: usize,
    /// Declared per-example loss range is [0, loss_bound].
    pub loss_bound: f64,
    /// Number of random loss tables checked besides the fixed one.
    pub random_tables: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            space_values: 3,
            max_size: 4,
            grid_points: 3,
            loss_bound: 1.0,
            random_tables: 4,
        }
    }
}

/// Complete, self-contained description of one experiment run. Serialized
/// verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub jobs: usize,
    pub confidence: f64,
    pub universe: UniverseConfig,
    /// Membership sampling rate p.
    pub sampling_rate: f64,
    pub r_ipc: f64,
    /// Pipeline runs used only to pick guess thresholds.
    ///
    /// `trials` is the generic repeat knob: trials for protocol_gap,
    /// (S_init, T) pairs for dm_properties, per-row repetitions for
    /// dpsgd_table, randomized-response repeats for eps_estimation, and
    /// trials per side for audit.
    pub shadows: usize,
    /// ε above this is reported as vacuous, never as a guarantee.
    pub vacuous_threshold: f64,
    pub dpsgd: DpsgdConfig,
    pub audit: AuditConfig,
    pub eps: EpsConfig,
    pub em: EmConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::ProtocolGap,
            seed: 7,
            trials: 20,
            jobs: 1,
            confidence: 0.95,
            universe: UniverseConfig::default(),
            sampling_rate: 0.5,
            r_ipc: 0.02,
            shadows: 4,
            vacuous_threshold: crate::accountant::DEFAULT_VACUOUS_THRESHOLD,
            dpsgd: DpsgdConfig::default(),
            audit: AuditConfig::default(),
            eps: EpsConfig::default(),
            em: EmConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults tuned per experiment kind.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            kind,
            ..ExperimentConfig::default()
        };
        match kind {
            ExperimentKind::ProtocolGap => {}
            ExperimentKind::DmProperties => {
                cfg.trials = 100;
                cfg.universe.n = 400;
                cfg.universe.d = 6;
            }
            ExperimentKind::DpsgdTable => {
                cfg.trials = 3;
                cfg.universe.separation = 4.0;
            }
            ExperimentKind::EpsEstimation => {
                cfg.trials = 100;
            }
            ExperimentKind::Audit => {
                cfg.trials = 200;
            }
            ExperimentKind::EmCheck => {
                cfg.trials = 1;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence must be in (0,1), got {}",
                self.confidence
            )));
        }
        if !(self.sampling_rate >= 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config("sampling_rate must be in [0,1]".into()));
        }
        if !(self.r_ipc > 0.0 && self.r_ipc <= 1.0) {
            return Err(Error::Config("r_ipc must be in (0,1]".into()));
        }
        if self.shadows < 2 {
            return Err(Error::Config("shadows must be >= 2".into()));
        }
        self.universe.to_spec(self.seed).validate().map_err(|e| {
            Error::Config(format!("universe: {e}"))
        })?;
        if self.kind == ExperimentKind::Audit && self.trials < 20 {
            return Err(Error::Config("audit needs trials >= 20 per side".into()));
        }
        Ok(())
    }

    /// Parse from TOML, rejecting unknown keys, then validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}
