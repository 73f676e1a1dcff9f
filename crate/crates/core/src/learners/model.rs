//! Forward evaluation and per-example gradients for the supported
//! architectures.

use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::log_sum_exp;

use super::{Architecture, ModelArtifact};

/// Per-example evaluation output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Cross-entropy of the true label (nearest-neighbor surrogate for the
    /// memorizing architecture).
    pub loss: f64,
    /// Class-probability vector; sums to one.
    pub confidence: Vec<f64>,
}

/// Seeded N(0, 0.1) initialization; the memorizing architecture has no free
/// parameters to initialize.
pub fn init_theta(arch: &Architecture, init_seed: u64) -> Vec<f64> {
    match arch {
        Architecture::Memorizing { .. } => vec![0.0; arch.param_len()],
        _ => {
            let mut rng = seed::rng(seed::derive(init_seed, 0x696e6974_5f));
            let normal = Normal::new(0.0, 0.1).expect("init normal");
            (0..arch.param_len()).map(|_| normal.sample(&mut rng)).collect()
        }
    }
}

fn softmax_from_logits(logits: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(logits);
    let probs = logits.iter().map(|l| (l - lse).exp()).collect();
    (probs, lse)
}

fn logistic_logits(theta: &[f64], x: &[f64], dim: usize, classes: usize) -> Vec<f64> {
    let mut logits = Vec::with_capacity(classes);
    for c in 0..classes {
        let w = &theta[c * dim..(c + 1) * dim];
        let b = theta[classes * dim + c];
        let mut z = b;
        for j in 0..dim {
            z += w[j] * x[j];
        }
        logits.push(z);
    }
    logits
}

struct MlpForward {
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
}

fn mlp_forward(theta: &[f64], x: &[f64], dim: usize, hidden: usize, classes: usize) -> MlpForward {
    let w1 = &theta[..hidden * dim];
    let b1 = &theta[hidden * dim..hidden * dim + hidden];
    let off2 = hidden * dim + hidden;
    let w2 = &theta[off2..off2 + classes * hidden];
    let b2 = &theta[off2 + classes * hidden..];

    let mut hidden_act = Vec::with_capacity(hidden);
    for h in 0..hidden {
        let mut z = b1[h];
        for j in 0..dim {
            z += w1[h * dim + j] * x[j];
        }
        hidden_act.push(z.tanh());
    }
    let mut logits = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut z = b2[c];
        for h in 0..hidden {
            z += w2[c * hidden + h] * hidden_act[h];
        }
        logits.push(z);
    }
    MlpForward { hidden_act, logits }
}

fn memorizing_eval(theta: &[f64], x: &[f64], y: usize, dim: usize, classes: usize) -> EvalRecord {
    let stride = dim + 1;
    let stored = theta.len() / stride;
    let mut best_dist_sq = f64::INFINITY;
    let mut best_label = 0usize;
    for s in 0..stored {
        let row = &theta[s * stride..s * stride + dim];
        let mut d = 0.0;
        for j in 0..dim {
            let diff = x[j] - row[j];
            d += diff * diff;
        }
        if d < best_dist_sq {
            best_dist_sq = d;
            best_label = theta[s * stride + dim] as usize;
        }
    }
    // p(nn label) = (1 + (K-1)e^{-dist}) / K, p(other) = (1 - e^{-dist}) / K:
    // exactly one-hot at distance zero, uniform in the far limit, and the
    // nearest neighbor's label always wins the argmax.
    let dist = best_dist_sq.sqrt();
    let decay = (-dist).exp();
    let k = classes as f64;
    let mut confidence = vec![(1.0 - decay) / k; classes];
    confidence[best_label.min(classes - 1)] = (1.0 + (k - 1.0) * decay) / k;
    let loss = -confidence[y.min(classes - 1)].ln();
    EvalRecord { loss, confidence }
}

/// Evaluate one example: cross-entropy of the true label plus the full
/// confidence vector.
pub fn evaluate_one(model: &ModelArtifact, x: &[f64], y: usize) -> Result<EvalRecord> {
    let arch = &model.arch;
    if x.len() != arch.dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.dim(),
            got: x.len(),
        });
    }
    if y >= arch.classes() {
        return Err(Error::Validation(format!(
            "label {y} outside [0, {})",
            arch.classes()
        )));
    }
    let record = match *arch {
        Architecture::Logistic { dim, classes } => {
            let logits = logistic_logits(&model.theta, x, dim, classes);
            let (confidence, lse) = softmax_from_logits(&logits);
            EvalRecord {
                loss: lse - logits[y],
                confidence,
            }
        }
        Architecture::Mlp {
            dim,
            hidden,
            classes,
        } => {
            let fwd = mlp_forward(&model.theta, x, dim, hidden, classes);
            let (confidence, lse) = softmax_from_logits(&fwd.logits);
            EvalRecord {
                loss: lse - fwd.logits[y],
                confidence,
            }
        }
        Architecture::Memorizing { dim, classes, .. } => {
            memorizing_eval(&model.theta, x, y, dim, classes)
        }
    };
    Ok(record)
}

/// Evaluate every example of a dataset.
pub fn evaluate(model: &ModelArtifact, data: &Dataset) -> Result<Vec<EvalRecord>> {
    if data.dim() != model.arch.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.arch.dim(),
            got: data.dim(),
        });
    }
    (0..data.len())
        .map(|i| evaluate_one(model, data.feature(i), data.label(i)))
        .collect()
}

/// Cross-entropy loss and its gradient w.r.t. θ for one example, written
/// into `grad` (must have `param_len` entries). Memorizing models have no
/// gradient-trainable parameters.
pub fn loss_gradient(
    model: &ModelArtifact,
    x: &[f64],
    y: usize,
    grad: &mut [f64],
) -> Result<f64> {
    if matches!(model.arch, Architecture::Memorizing { .. }) {
        return Err(Error::Validation(
            "memorizing models are not gradient-trained".into(),
        ));
    }
    if x.len() != model.arch.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.arch.dim(),
            got: x.len(),
        });
    }
    if grad.len() != model.arch.param_len() {
        return Err(Error::DimensionMismatch {
            expected: model.arch.param_len(),
            got: grad.len(),
        });
    }
    if y >= model.arch.classes() {
        return Err(Error::Validation(format!(
            "label {y} outside [0, {})",
            model.arch.classes()
        )));
    }
    Ok(loss_and_grad(&model.arch, &model.theta, x, y, grad))
}

// Internal fast path shared by the trainers; grad is zeroed first.
pub(super) fn loss_and_grad(
    arch: &Architecture,
    theta: &[f64],
    x: &[f64],
    y: usize,
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    match *arch {
        Architecture::Logistic { dim, classes } => {
            let logits = logistic_logits(theta, x, dim, classes);
            let (probs, lse) = softmax_from_logits(&logits);
            for c in 0..classes {
                let delta = probs[c] - if c == y { 1.0 } else { 0.0 };
                for j in 0..dim {
                    grad[c * dim + j] = delta * x[j];
                }
                grad[classes * dim + c] = delta;
            }
            lse - logits[y]
        }
        Architecture::Mlp {
            dim,
            hidden,
            classes,
        } => {
            let fwd = mlp_forward(theta, x, dim, hidden, classes);
            let (probs, lse) = softmax_from_logits(&fwd.logits);
            let off2 = hidden * dim + hidden;
            let w2 = &theta[off2..off2 + classes * hidden];

            let mut delta2 = Vec::with_capacity(classes);
            for c in 0..classes {
                delta2.push(probs[c] - if c == y { 1.0 } else { 0.0 });
            }
            for c in 0..classes {
                for h in 0..hidden {
                    grad[off2 + c * hidden + h] = delta2[c] * fwd.hidden_act[h];
                }
                grad[off2 + classes * hidden + c] = delta2[c];
            }
            for h in 0..hidden {
                let mut back = 0.0;
                for c in 0..classes {
                    back += w2[c * hidden + h] * delta2[c];
                }
                let d1 = back * (1.0 - fwd.hidden_act[h] * fwd.hidden_act[h]);
                for j in 0..dim {
                    grad[h * dim + j] = d1 * x[j];
                }
                grad[hidden * dim + h] = d1;
            }
            lse - fwd.logits[y]
        }
        Architecture::Memorizing { .. } => {
            unreachable!("memorizing models are not gradient-trained")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{train_memorizing, Provenance};
    use super::*;
    use crate::data::{generate_universe, UniverseSpec};
    use rand::Rng;

    fn toy_universe(seed: u64) -> crate::data::Universe {
        generate_universe(&UniverseSpec {
            n: 60,
            d: 3,
            k: 2,
            separation: 3.0,
            noise: 1.0,
            seed,
        })
        .unwrap()
    }

    fn artifact(arch: Architecture, theta: Vec<f64>) -> ModelArtifact {
        ModelArtifact {
            arch,
            theta,
            provenance: Provenance {
                dataset_sha256: String::new(),
                seed: 0,
                hyper: String::new(),
            },
            budget: None,
        }
    }

    // Oracle: hand-computed cross-entropy for fixed weights, one example.
    // W = [[0.1, -0.2], [0.3, 0.4]], b = [0, 0.1], x = [1, 2], y = 0:
    // logits = (-0.3, 1.2), loss = ln(e^-0.3 + e^1.2) + 0.3.
    #[test]
    fn logistic_cross_entropy_matches_hand_value() {
        let arch = Architecture::Logistic { dim: 2, classes: 2 };
        let m = artifact(arch, vec![0.1, -0.2, 0.3, 0.4, 0.0, 0.1]);
        let rec = evaluate_one(&m, &[1.0, 2.0], 0).unwrap();
        let hand = ((-0.3f64).exp() + 1.2f64.exp()).ln() + 0.3;
        assert!((rec.loss - hand).abs() < 1e-12);
        let p0 = (-0.3f64).exp() / ((-0.3f64).exp() + 1.2f64.exp());
        assert!((rec.confidence[0] - p0).abs() < 1e-12);
    }

    #[test]
    fn confidences_sum_to_one() {
        let u = toy_universe(1);
        for arch in [
            Architecture::Logistic { dim: 3, classes: 2 },
            Architecture::Mlp {
                dim: 3,
                hidden: 7,
                classes: 2,
            },
        ] {
            let m = artifact(arch, init_theta(&arch, 5));
            for rec in evaluate(&m, u.as_dataset()).unwrap() {
                let total: f64 = rec.confidence.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn memorizing_zero_loss_on_members_positive_far_away() {
        let u = toy_universe(2);
        let model = train_memorizing(u.as_dataset()).unwrap();
        for rec in evaluate(&model, u.as_dataset()).unwrap() {
            assert_eq!(rec.loss, 0.0);
        }
        let far = vec![100.0, 100.0, 100.0];
        let rec = evaluate_one(&model, &far, 0).unwrap();
        assert!(rec.loss > 0.0);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let arch = Architecture::Logistic { dim: 3, classes: 2 };
        let m = artifact(arch, init_theta(&arch, 5));
        assert!(matches!(
            evaluate_one(&m, &[1.0, 2.0], 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(evaluate_one(&m, &[1.0, 2.0, 3.0], 7).is_err());
    }

    // Analytic gradients vs central finite differences on random probes.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::rng(77);
        for arch in [
            Architecture::Logistic { dim: 4, classes: 3 },
            Architecture::Mlp {
                dim: 4,
                hidden: 6,
                classes: 3,
            },
        ] {
            let n_params = arch.param_len();
            for probe in 0..100 {
                let theta: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = rng.random_range(0..3);
                let mut grad = vec![0.0; n_params];
                loss_and_grad(&arch, &theta, &x, y, &mut grad);

                let h = 1e-5;
                let k = probe % n_params;
                let mut tp = theta.clone();
                tp[k] += h;
                let mut tm = theta.clone();
                tm[k] -= h;
                let mut scratch = vec![0.0; n_params];
                let lp = loss_and_grad(&arch, &tp, &x, y, &mut scratch);
                let lm = loss_and_grad(&arch, &tm, &x, y, &mut scratch);
                let fd = (lp - lm) / (2.0 * h);
                let denom = grad[k].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[k] - fd).abs() / denom < 1e-4,
                    "{arch:?} probe {probe} param {k}: {} vs {}",
                    grad[k],
                    fd
                );
            }
        }
    }
}
