//! Exponential-mechanism sampler over a discrete parameter grid: selection
//! weights proportional to exp(-Σᵢ l(θ, xᵢ)).

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{kahan_sum, log_sum_exp};

use super::model::evaluate_one;
use super::{LossSpec, ModelArtifact};

/// Σᵢ l(θ, xᵢ) for every grid point, with the loss-spec clamp applied
/// per example.
pub fn total_losses(
    grid: &[ModelArtifact],
    spec: &LossSpec,
    data: &Dataset,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Validation("parameter grid is empty".into()));
    }
    grid.iter()
        .map(|model| {
            let mut total = 0.0;
            for i in 0..data.len() {
                let rec = evaluate_one(model, data.feature(i), data.label(i))?;
                let l = spec.apply(rec.loss);
                if !l.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite loss {l} for grid point; clamp the loss spec"
                    )));
                }
                total += l;
            }
            Ok(total)
        })
        .collect()
}

/// Normalized log-probabilities log pᵢ = -Lᵢ - logΣⱼexp(-Lⱼ); overflow-safe.
pub fn exponential_mechanism_log_probs(total_losses: &[f64]) -> Result<Vec<f64>> {
    if total_losses.is_empty() {
        return Err(Error::Validation("parameter grid is empty".into()));
    }
    if total_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Validation("total losses must be finite".into()));
    }
    // Shift by the max first: differences of nearby huge totals are exact,
    // while subtracting a huge normalizer from each would lose the entire
    // fractional part.
    let neg: Vec<f64> = total_losses.iter().map(|l| -l).collect();
    let hi = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = neg.iter().map(|v| v - hi).collect();
    let log_z_rel = log_sum_exp(&rel);
    Ok(rel.into_iter().map(|w| w - log_z_rel).collect())
}

/// Draw one index from the normalized distribution; deterministic given seed.
pub fn sample_index_from_log_probs(log_probs: &[f64], sample_seed: u64) -> usize {
    let mut rng = seed::rng(seed::derive(sample_seed, 0x65786d65));
    let u: f64 = rng.random();
    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    let total = kahan_sum(probs.iter().copied());
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p / total;
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// The exponential mechanism over a model grid: sample a grid index with
/// probability proportional to exp(-Σᵢ l(θ, xᵢ)).
pub fn sample_exponential_mechanism(
    grid: &[ModelArtifact],
    spec: &LossSpec,
    data: &Dataset,
    sample_seed: u64,
) -> Result<usize> {
    let totals = total_losses(grid, spec, data)?;
    let log_probs = exponential_mechanism_log_probs(&totals)?;
    Ok(sample_index_from_log_probs(&log_probs, sample_seed))
}
