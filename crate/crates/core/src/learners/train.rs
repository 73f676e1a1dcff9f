//! Gradient-descent trainers (plain SGD and DP-SGD) plus the memorizing
//! nearest-neighbor learner.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::accountant::{dpsgd_epsilon, AccountingParams, PrivacyBudget};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::l2_norm;

use super::model::{init_theta, loss_and_grad};
use super::{Architecture, ModelArtifact, ModelKind, Provenance};

const INIT_TAG: u64 = 0x696e6974_5f;
const SHUFFLE_TAG: u64 = 0x73687566;
const SAMPLE_TAG: u64 = 0x706f6973;
const NOISE_TAG: u64 = 0x6e6f6973;

/// Plain SGD hyperparameters; `batch = 0` means full batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub model: ModelKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl SgdHyper {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!(
            "sgd model={:?} lr={} epochs={} batch={}",
            self.model, self.lr, self.epochs, self.batch
        )
    }
}

/// Explicit no-clip sentinel; never a magic number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClipMode {
    None,
    L2 { c: f64 },
}

/// DP-SGD hyperparameters. Poisson subsampling at `sample_rate`, per-example
/// clipping, Gaussian noise `noise_multiplier * c` on the gradient sum.
///
/// `lot_size` fixes the normalizer of the noised sum; it defaults to
/// `sample_rate * |data|` and must be pinned externally when two datasets of
/// different sizes have to share one mechanism (as in neighboring-dataset
/// audits).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdHyper {
    pub model: ModelKind,
    pub lr: f64,
    pub steps: usize,
    pub clip: ClipMode,
    pub noise_multiplier: f64,
    pub sample_rate: f64,
    pub delta: f64,
    pub lot_size: Option<f64>,
}

impl DpSgdHyper {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Validation(format!(
                "sample rate must be in (0,1], got {}",
                self.sample_rate
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Validation("noise multiplier must be >= 0".into()));
        }
        if let ClipMode::L2 { c } = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Validation(format!("clip norm must be positive, got {c}")));
            }
        } else if self.noise_multiplier > 0.0 {
            return Err(Error::Validation(
                "noise without clipping has unbounded sensitivity; set an L2 clip".into(),
            ));
        }
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!(
            "dpsgd model={:?} lr={} steps={} clip={:?} sigma={} q={} delta={}",
            self.model,
            self.lr,
            self.steps,
            self.clip,
            self.noise_multiplier,
            self.sample_rate,
            self.delta
        )
    }
}

// Accumulate per-example gradients over `rows`, optionally clipping each to
// L2 norm <= c before it enters the sum. Both trainers share this path so a
// no-noise no-clip DP-SGD run is bit-identical to plain SGD.
fn accumulate_batch(
    arch: &Architecture,
    theta: &[f64],
    data: &Dataset,
    rows: &[usize],
    clip: Option<f64>,
    grad_sum: &mut [f64],
    buf: &mut [f64],
) -> f64 {
    grad_sum.fill(0.0);
    let mut loss_sum = 0.0;
    for &i in rows {
        loss_sum += loss_and_grad(arch, theta, data.feature(i), data.label(i), buf);
        if let Some(c) = clip {
            let norm = l2_norm(buf);
            if norm > c {
                let scale = c / norm;
                for g in buf.iter_mut() {
                    *g *= scale;
                }
            }
            debug_assert!(l2_norm(buf) <= c * (1.0 + 1e-12));
        }
        for (s, g) in grad_sum.iter_mut().zip(buf.iter()) {
            *s += g;
        }
    }
    loss_sum
}

fn apply_update(theta: &mut [f64], grad_sum: &[f64], scale: f64, lr: f64) {
    for (t, g) in theta.iter_mut().zip(grad_sum) {
        *t -= lr * (g * scale);
    }
}

/// Deterministic SGD on cross-entropy; `epochs = 0` returns the seeded
/// initialization unchanged.
pub fn train_sgd(data: &Dataset, hyper: &SgdHyper, train_seed: u64) -> Result<ModelArtifact> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    let arch = Architecture::for_kind(hyper.model, data.dim(), data.num_classes());
    let mut theta = init_theta(&arch, seed::derive(train_seed, INIT_TAG));
    let mut grad_sum = vec![0.0; theta.len()];
    let mut buf = vec![0.0; theta.len()];
    let full_batch = hyper.batch == 0 || hyper.batch >= data.len();
    let mut shuffle_rng = seed::rng(seed::derive(train_seed, SHUFFLE_TAG));
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;

    for _epoch in 0..hyper.epochs {
        if full_batch {
            let loss = accumulate_batch(&arch, &theta, data, &all_rows, None, &mut grad_sum, &mut buf);
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    detail: format!("non-finite batch loss {loss}"),
                });
            }
            apply_update(&mut theta, &grad_sum, 1.0 / all_rows.len() as f64, hyper.lr);
            step += 1;
        } else {
            let mut perm = all_rows.clone();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut shuffle_rng);
            for chunk in perm.chunks(hyper.batch) {
                let loss =
                    accumulate_batch(&arch, &theta, data, chunk, None, &mut grad_sum, &mut buf);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        step,
                        detail: format!("non-finite batch loss {loss}"),
                    });
                }
                apply_update(&mut theta, &grad_sum, 1.0 / chunk.len() as f64, hyper.lr);
                step += 1;
            }
        }
    }

    Ok(ModelArtifact {
        arch,
        theta,
        provenance: Provenance {
            dataset_sha256: data.content_hash(),
            seed: train_seed,
            hyper: hyper.descriptor(),
        },
        budget: None,
    })
}

/// Store the training set verbatim; per-example loss on members is exactly 0.
pub fn train_memorizing(data: &Dataset) -> Result<ModelArtifact> {
    if data.is_empty() {
        return Err(Error::Validation("cannot memorize an empty dataset".into()));
    }
    let arch = Architecture::Memorizing {
        dim: data.dim(),
        classes: data.num_classes(),
        stored: data.len(),
    };
    let mut theta = Vec::with_capacity(arch.param_len());
    for i in 0..data.len() {
        theta.extend_from_slice(data.feature(i));
        theta.push(data.label(i) as f64);
    }
    Ok(ModelArtifact {
        arch,
        theta,
        provenance: Provenance {
            dataset_sha256: data.content_hash(),
            seed: 0,
            hyper: "memorizing".into(),
        },
        budget: None,
    })
}

/// DP-SGD: Poisson-sampled batches, per-example clipping, Gaussian noise on
/// the gradient sum, and an accountant-computed budget attached to the
/// artifact. σ = 0 is flagged non-private rather than accounted.
pub fn train_dpsgd(data: &Dataset, hyper: &DpSgdHyper, train_seed: u64) -> Result<ModelArtifact> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    let arch = Architecture::for_kind(hyper.model, data.dim(), data.num_classes());
    let mut theta = init_theta(&arch, seed::derive(train_seed, INIT_TAG));
    let mut grad_sum = vec![0.0; theta.len()];
    let mut buf = vec![0.0; theta.len()];
    let mut sample_rng = seed::rng(seed::derive(train_seed, SAMPLE_TAG));
    let mut noise_rng = seed::rng(seed::derive(train_seed, NOISE_TAG));
    let lot = hyper
        .lot_size
        .unwrap_or(hyper.sample_rate * data.len() as f64);
    if !(lot > 0.0 && lot.is_finite()) {
        return Err(Error::Validation(format!("lot size must be positive, got {lot}")));
    }
    let clip = match hyper.clip {
        ClipMode::None => None,
        ClipMode::L2 { c } => Some(c),
    };

    let mut rows = Vec::with_capacity(data.len());
    for step in 0..hyper.steps {
        rows.clear();
        for i in 0..data.len() {
            if sample_rng.random::<f64>() < hyper.sample_rate {
                rows.push(i);
            }
        }
        let loss = accumulate_batch(&arch, &theta, data, &rows, clip, &mut grad_sum, &mut buf);
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("non-finite batch loss {loss}"),
            });
        }
        if hyper.noise_multiplier > 0.0 {
            let c = clip.expect("validated: noise requires a clip norm");
            let noise = Normal::new(0.0, hyper.noise_multiplier * c)
                .map_err(|e| Error::Validation(format!("noise scale: {e}")))?;
            for g in grad_sum.iter_mut() {
                *g += noise.sample(&mut noise_rng);
            }
        }
        apply_update(&mut theta, &grad_sum, 1.0 / lot, hyper.lr);
    }

    let mechanism = format!(
        "subsampled_gaussian(sigma={}, q={}, steps={})",
        hyper.noise_multiplier, hyper.sample_rate, hyper.steps
    );
    let budget = if hyper.noise_multiplier == 0.0 {
        PrivacyBudget::non_private(mechanism)
    } else if hyper.steps == 0 {
        PrivacyBudget {
            epsilon: Some(0.0),
            delta: hyper.delta,
            mechanism,
            accounting: Some(AccountingParams {
                sigma: hyper.noise_multiplier,
                sample_rate: hyper.sample_rate,
                steps: 0,
            }),
        }
    } else {
        let (eps, _) = dpsgd_epsilon(
            hyper.sample_rate,
            hyper.noise_multiplier,
            hyper.steps,
            hyper.delta,
        )?;
        PrivacyBudget {
            epsilon: Some(eps),
            delta: hyper.delta,
            mechanism,
            accounting: Some(AccountingParams {
                sigma: hyper.noise_multiplier,
                sample_rate: hyper.sample_rate,
                steps: hyper.steps,
            }),
        }
    };

    Ok(ModelArtifact {
        arch,
        theta,
        provenance: Provenance {
            dataset_sha256: data.content_hash(),
            seed: train_seed,
            hyper: hyper.descriptor(),
        },
        budget: Some(budget),
    })
}

#[cfg(test)]
mod tests {
    use super::super::evaluate;
    use super::*;
    use crate::data::{generate_universe, Universe, UniverseSpec};

    fn toy(sep: f64, seed: u64) -> Universe {
        generate_universe(&UniverseSpec {
            n: 200,
            d: 4,
            k: 2,
            separation: sep,
            noise: 1.0,
            seed,
        })
        .unwrap()
    }

    fn logistic_hyper() -> SgdHyper {
        SgdHyper {
            model: ModelKind::Logistic,
            lr: 0.5,
            epochs: 50,
            batch: 0,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let u = toy(1.0, 1);
        let hyper = SgdHyper {
            epochs: 0,
            ..logistic_hyper()
        };
        let m = train_sgd(u.as_dataset(), &hyper, 42).unwrap();
        let arch = Architecture::Logistic { dim: 4, classes: 2 };
        let init = init_theta(&arch, seed::derive(42, INIT_TAG));
        assert_eq!(m.theta, init);
    }

    #[test]
    fn training_is_deterministic() {
        let u = toy(2.0, 2);
        let hyper = SgdHyper {
            model: ModelKind::Mlp { hidden: 8 },
            lr: 0.1,
            epochs: 5,
            batch: 16,
        };
        let a = train_sgd(u.as_dataset(), &hyper, 7).unwrap();
        let b = train_sgd(u.as_dataset(), &hyper, 7).unwrap();
        assert_eq!(a.theta_bits(), b.theta_bits());
        let c = train_sgd(u.as_dataset(), &hyper, 8).unwrap();
        assert_ne!(a.theta_bits(), c.theta_bits());
    }

    // Separation 6 with unit noise leaves Bayes error ~Phi(-3) = 0.13%, so a
    // converged linear model must clear 99% training accuracy.
    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let u = generate_universe(&UniverseSpec {
            n: 400,
            d: 4,
            k: 2,
            separation: 6.0,
            noise: 1.0,
            seed: 3,
        })
        .unwrap();
        let m = train_sgd(u.as_dataset(), &logistic_hyper(), 5).unwrap();
        let recs = evaluate(&m, u.as_dataset()).unwrap();
        let correct = recs
            .iter()
            .zip(u.as_dataset().labels())
            .filter(|(r, &y)| {
                let pred = r
                    .confidence
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                pred == y
            })
            .count();
        let acc = correct as f64 / u.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    // lr large enough that the parameter overflow shows up as a non-finite
    // loss on the following step.
    #[test]
    fn divergence_reports_step_index() {
        let u = toy(2.0, 4);
        let hyper = SgdHyper {
            lr: 1e308,
            epochs: 50,
            ..logistic_hyper()
        };
        match train_sgd(u.as_dataset(), &hyper, 1) {
            Err(Error::Training { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn dpsgd_without_noise_or_clip_reduces_to_sgd() {
        let u = toy(2.0, 5);
        let epochs = 7;
        let sgd = train_sgd(
            u.as_dataset(),
            &SgdHyper {
                model: ModelKind::Logistic,
                lr: 0.3,
                epochs,
                batch: 0,
            },
            11,
        )
        .unwrap();
        let dp = train_dpsgd(
            u.as_dataset(),
            &DpSgdHyper {
                model: ModelKind::Logistic,
                lr: 0.3,
                steps: epochs,
                clip: ClipMode::None,
                noise_multiplier: 0.0,
                sample_rate: 1.0,
                delta: 1e-5,
                lot_size: None,
            },
            11,
        )
        .unwrap();
        assert_eq!(sgd.theta_bits(), dp.theta_bits());
        assert!(dp.budget.as_ref().unwrap().is_non_private());
    }

    #[test]
    fn dpsgd_budget_matches_accountant_bitwise() {
        let u = toy(2.0, 6);
        let hyper = DpSgdHyper {
            model: ModelKind::Logistic,
            lr: 0.1,
            steps: 20,
            clip: ClipMode::L2 { c: 1.0 },
            noise_multiplier: 1.0,
            sample_rate: 0.25,
            delta: 1e-5,
            lot_size: None,
        };
        let m = train_dpsgd(u.as_dataset(), &hyper, 13).unwrap();
        let budget = m.budget.unwrap();
        let (eps, _) = dpsgd_epsilon(0.25, 1.0, 20, 1e-5).unwrap();
        assert_eq!(budget.epsilon.unwrap().to_bits(), eps.to_bits());
        let params = budget.accounting.unwrap();
        assert_eq!(params.steps, 20);
        assert_eq!(params.sigma, 1.0);
    }

    #[test]
    fn dpsgd_rejects_noise_without_clip() {
        let u = toy(2.0, 7);
        let hyper = DpSgdHyper {
            model: ModelKind::Logistic,
            lr: 0.1,
            steps: 5,
            clip: ClipMode::None,
            noise_multiplier: 1.0,
            sample_rate: 0.5,
            delta: 1e-5,
            lot_size: None,
        };
        assert!(train_dpsgd(u.as_dataset(), &hyper, 1).is_err());
    }

    #[test]
    fn clipping_bounds_every_per_example_gradient() {
        let u = toy(2.0, 8);
        let data = u.as_dataset();
        let arch = Architecture::Logistic { dim: 4, classes: 2 };
        let theta = init_theta(&arch, 3);
        let c = 0.05;
        let mut grad_sum = vec![0.0; arch.param_len()];
        let mut buf = vec![0.0; arch.param_len()];
        for i in 0..data.len() {
            accumulate_batch(&arch, &theta, data, &[i], Some(c), &mut grad_sum, &mut buf);
            assert!(l2_norm(&grad_sum) <= c * (1.0 + 1e-12), "example {i}");
        }
    }

    #[test]
    fn memorizing_rejects_empty() {
        let u = toy(1.0, 9);
        let empty = u.subset(&[]).unwrap();
        assert!(train_memorizing(&empty).is_err());
    }

    #[test]
    fn retraining_from_provenance_is_bit_identical() {
        let u = toy(2.0, 10);
        let hyper = SgdHyper {
            model: ModelKind::Mlp { hidden: 6 },
            lr: 0.2,
            epochs: 4,
            batch: 32,
        };
        let first = train_sgd(u.as_dataset(), &hyper, 21).unwrap();
        let again = train_sgd(u.as_dataset(), &hyper, first.provenance.seed).unwrap();
        assert_eq!(first.theta_bits(), again.theta_bits());
        assert_eq!(first.provenance.dataset_sha256, again.provenance.dataset_sha256);
    }
}
