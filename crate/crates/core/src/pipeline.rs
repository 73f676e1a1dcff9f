//! The defender's end-to-end pipeline: membership challenge -> optional
//! condensation -> trainer. Shadow training, audits and experiments all run
//! the same descriptor.

use serde::{Deserialize, Serialize};

use crate::condense::{
    condense_dm_linear, condense_random_subset, init_gaussian_centered, init_subset_of_t,
    CondensedDataset, InitKind,
};
use crate::data::{Dataset, MembershipChallenge, Universe};
use crate::error::{Error, Result};
use crate::learners::{train_dpsgd, train_memorizing, train_sgd, DpSgdHyper, ModelArtifact, SgdHyper};
use crate::seed;

const CONDENSE_TAG: u64 = 0x636f6e64;
const TRAIN_TAG: u64 = 0x7472696e;

/// Condensation stage of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CondenserSpec {
    None,
    RandomSubset { r_ipc: f64, stratified: bool },
    DmLinear { init: InitKind, r_ipc: f64 },
}

/// Trainer stage of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "trainer", rename_all = "snake_case")]
pub enum TrainerSpec {
    Memorizing,
    Sgd(SgdHyper),
    DpSgd(DpSgdHyper),
}

/// Complete defender pipeline; serializable so shadow models provably run
/// the same procedure as the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineDescriptor {
    /// Membership sampling rate p.
    pub sampling_rate: f64,
    pub condenser: CondenserSpec,
    pub trainer: TrainerSpec,
}

/// Output of one pipeline execution.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: ModelArtifact,
    pub condensed: Option<CondensedDataset>,
    pub train_set: Dataset,
}

/// Apply only the condensation stage to a training set.
pub fn condense_stage(
    condenser: &CondenserSpec,
    t: &Dataset,
    stage_seed: u64,
) -> Result<Option<CondensedDataset>> {
    match *condenser {
        CondenserSpec::None => Ok(None),
        CondenserSpec::RandomSubset { r_ipc, stratified } => Ok(Some(condense_random_subset(
            t,
            r_ipc,
            stratified,
            seed::derive(stage_seed, CONDENSE_TAG),
        )?)),
        CondenserSpec::DmLinear { init, r_ipc } => {
            if !(r_ipc > 0.0 && r_ipc <= 1.0) {
                return Err(Error::Validation(format!("r_ipc must be in (0,1], got {r_ipc}")));
            }
            let m = ((r_ipc * t.len() as f64 + 0.5).floor() as usize).max(1);
            let init_seed = seed::derive(stage_seed, CONDENSE_TAG);
            let dm_init = match init {
                InitKind::SubsetOfT => init_subset_of_t(t, m.min(t.len()), init_seed)?,
                InitKind::GaussianCentered => init_gaussian_centered(m.max(2), t.dim(), init_seed)?
                    .with_round_robin_labels(t.num_classes())?,
            };
            Ok(Some(condense_dm_linear(&dm_init, t)?))
        }
    }
}

/// Train on an already-materialized training set.
pub fn train_stage(trainer: &TrainerSpec, data: &Dataset, stage_seed: u64) -> Result<ModelArtifact> {
    match trainer {
        TrainerSpec::Memorizing => train_memorizing(data),
        TrainerSpec::Sgd(h) => train_sgd(data, h, seed::derive(stage_seed, TRAIN_TAG)),
        TrainerSpec::DpSgd(h) => train_dpsgd(data, h, seed::derive(stage_seed, TRAIN_TAG)),
    }
}

/// Run condensation + training for a given membership challenge.
pub fn run_pipeline(
    universe: &Universe,
    challenge: &MembershipChallenge,
    descriptor: &PipelineDescriptor,
    run_seed: u64,
) -> Result<PipelineRun> {
    if challenge.len() != universe.len() {
        return Err(Error::Validation("challenge does not cover the universe".into()));
    }
    let t = universe.subset(&challenge.member_ids())?;
    if t.is_empty() {
        return Err(Error::Validation("membership challenge selected no members".into()));
    }
    let condensed = condense_stage(&descriptor.condenser, &t, run_seed)?;
    let train_set = condensed
        .as_ref()
        .map(|c| c.data.clone())
        .unwrap_or_else(|| t.clone());
    let model = train_stage(&descriptor.trainer, &train_set, run_seed)?;
    Ok(PipelineRun {
        model,
        condensed,
        train_set,
    })
}
