//! Trainers producing model artifacts: plain SGD over logistic/MLP heads, a
//! deliberately memorizing nearest-neighbor learner, DP-SGD, and the
//! exponential-mechanism sampler over a discrete parameter grid.

mod exponential;
mod model;
mod train;

pub use exponential::{
    exponential_mechanism_log_probs, sample_exponential_mechanism, sample_index_from_log_probs,
    total_losses,
};
pub use model::{evaluate, evaluate_one, init_theta, loss_gradient, EvalRecord};
pub use train::{train_dpsgd, train_memorizing, train_sgd, ClipMode, DpSgdHyper, SgdHyper};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyBudget;
use crate::error::{Error, Result};

/// Parametric model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

/// Shape of a trained model; evaluation is a pure function of (θ, example).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    Logistic {
        dim: usize,
        classes: usize,
    },
    Mlp {
        dim: usize,
        hidden: usize,
        classes: usize,
    },
    /// Stores its training examples verbatim; loss 0 exactly on them.
    Memorizing {
        dim: usize,
        classes: usize,
        stored: usize,
    },
}

impl Architecture {
    pub fn for_kind(kind: ModelKind, dim: usize, classes: usize) -> Architecture {
        match kind {
            ModelKind::Logistic => Architecture::Logistic { dim, classes },
            ModelKind::Mlp { hidden } => Architecture::Mlp {
                dim,
                hidden,
                classes,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Architecture::Logistic { dim, .. }
            | Architecture::Mlp { dim, .. }
            | Architecture::Memorizing { dim, .. } => dim,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Architecture::Logistic { classes, .. }
            | Architecture::Mlp { classes, .. }
            | Architecture::Memorizing { classes, .. } => classes,
        }
    }

    pub fn param_len(&self) -> usize {
        match *self {
            Architecture::Logistic { dim, classes } => classes * dim + classes,
            Architecture::Mlp {
                dim,
                hidden,
                classes,
            } => hidden * dim + hidden + classes * hidden + classes,
            Architecture::Memorizing { dim, stored, .. } => stored * (dim + 1),
        }
    }

    /// One-line descriptor used by the flat text format.
    pub fn descriptor(&self) -> String {
        match *self {
            Architecture::Logistic { dim, classes } => format!("logistic dim={dim} classes={classes}"),
            Architecture::Mlp {
                dim,
                hidden,
                classes,
            } => format!("mlp dim={dim} hidden={hidden} classes={classes}"),
            Architecture::Memorizing {
                dim,
                classes,
                stored,
            } => format!("memorizing dim={dim} classes={classes} stored={stored}"),
        }
    }

    pub fn parse_descriptor(line: &str) -> Result<Architecture> {
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Validation("empty architecture descriptor".into()))?;
        let mut fields = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("bad descriptor field {p:?}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::Validation(format!("bad descriptor value {p:?}")))?;
            fields.insert(k.to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Validation(format!("descriptor missing {k}")))
        };
        match name {
            "logistic" => Ok(Architecture::Logistic {
                dim: get("dim")?,
                classes: get("classes")?,
            }),
            "mlp" => Ok(Architecture::Mlp {
                dim: get("dim")?,
                hidden: get("hidden")?,
                classes: get("classes")?,
            }),
            "memorizing" => Ok(Architecture::Memorizing {
                dim: get("dim")?,
                classes: get("classes")?,
                stored: get("stored")?,
            }),
            other => Err(Error::Validation(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Enough context to retrain the artifact bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub seed: u64,
    pub hyper: String,
}

/// Trained parameters plus provenance and an optional privacy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub arch: Architecture,
    pub theta: Vec<f64>,
    pub provenance: Provenance,
    pub budget: Option<PrivacyBudget>,
}

impl ModelArtifact {
    pub fn theta_bits(&self) -> Vec<u64> {
        self.theta.iter().map(|v| v.to_bits()).collect()
    }
}

/// Loss function identifier plus its declared range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    ClampedCrossEntropy,
}

impl LossSpec {
    /// Plain cross-entropy; unbounded above.
    pub fn cross_entropy() -> LossSpec {
        LossSpec {
            kind: LossKind::CrossEntropy,
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    /// Cross-entropy clamped to [0, bound].
    pub fn clamped_cross_entropy(bound: f64) -> Result<LossSpec> {
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::Validation(format!(
                "clamp bound must be finite and >= 0, got {bound}"
            )));
        }
        Ok(LossSpec {
            kind: LossKind::ClampedCrossEntropy,
            lo: 0.0,
            hi: bound,
        })
    }

    pub fn is_bounded(&self) -> bool {
        self.hi.is_finite()
    }

    pub fn apply(&self, raw_loss: f64) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => raw_loss,
            LossKind::ClampedCrossEntropy => raw_loss.clamp(self.lo, self.hi),
        }
    }
}

/// Write θ in the flat text format (descriptor line + one decimal per line)
/// and the provenance/budget sidecar as TOML.
pub fn save_model(artifact: &ModelArtifact, params_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut text = String::new();
    text.push_str(&artifact.arch.descriptor());
    text.push('\n');
    for v in &artifact.theta {
        // {:?} prints the shortest decimal that round-trips the f64.
        text.push_str(&format!("{v:?}\n"));
    }
    std::fs::write(params_path, text).map_err(|e| Error::io(params_path.display().to_string(), e))?;

    #[derive(Serialize)]
    struct Sidecar<'a> {
        provenance: &'a Provenance,
        budget: &'a Option<PrivacyBudget>,
    }
    let sidecar = toml::to_string(&Sidecar {
        provenance: &artifact.provenance,
        budget: &artifact.budget,
    })
    .map_err(|e| Error::Serialize(e.to_string()))?;
    std::fs::write(sidecar_path, sidecar)
        .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
    Ok(())
}

pub fn load_model(params_path: &Path, sidecar_path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(params_path)
        .map_err(|e| Error::io(params_path.display().to_string(), e))?;
    let mut lines = text.lines();
    let arch = Architecture::parse_descriptor(
        lines
            .next()
            .ok_or_else(|| Error::Validation("empty model file".into()))?,
    )?;
    let theta: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad parameter line {l:?}")))
        })
        .collect::<Result<_>>()?;
    if theta.len() != arch.param_len() {
        return Err(Error::Validation(format!(
            "parameter count {} does not match architecture ({} expected)",
            theta.len(),
            arch.param_len()
        )));
    }

    #[derive(Deserialize)]
    struct Sidecar {
        provenance: Provenance,
        budget: Option<PrivacyBudget>,
    }
    let sidecar_text = std::fs::read_to_string(sidecar_path)
        .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
    let sidecar: Sidecar =
        toml::from_str(&sidecar_text).map_err(|e| Error::Serialize(e.to_string()))?;
    Ok(ModelArtifact {
        arch,
        theta,
        provenance: sidecar.provenance,
        budget: sidecar.budget,
    })
}
