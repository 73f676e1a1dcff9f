//! Randomized response: the canonical pure-ε mechanism with a closed-form
//! optimal distinguisher, used as the ground-truth test bed for empirical
//! ε estimation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Probability that a response is flipped under ε-randomized response.
pub fn flip_probability(epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Validation(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    Ok(1.0 / (1.0 + epsilon.exp()))
}

/// Analytic ε of randomized response with the given flip probability.
pub fn analytic_epsilon(flip_prob: f64) -> Result<f64> {
    if !(flip_prob > 0.0 && flip_prob < 1.0) {
        return Err(Error::Validation(format!(
            "flip probability must be in (0,1), got {flip_prob}"
        )));
    }
    Ok(((1.0 - flip_prob) / flip_prob).ln().abs())
}

/// The optimal attack answers with the observed bit: (TPR, FPR) =
/// (e^ε, 1) / (1 + e^ε).
pub fn optimal_attack_rates(epsilon: f64) -> (f64, f64) {
    let e = epsilon.exp();
    (e / (1.0 + e), 1.0 / (1.0 + e))
}

/// Apply ε-randomized response to each true bit; deterministic given seed.
pub fn randomize(bits: &[bool], epsilon: f64, rr_seed: u64) -> Result<Vec<bool>> {
    let flip = flip_probability(epsilon)?;
    let mut rng = seed::rng(seed::derive(rr_seed, 0x72726262));
    Ok(bits
        .iter()
        .map(|&b| {
            if rng.random::<f64>() < flip {
                !b
            } else {
                b
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_probability_round_trips_epsilon() {
        let eps = 3f64.ln();
        let f = flip_probability(eps).unwrap();
        assert!((f - 0.25).abs() < 1e-12);
        assert!((analytic_epsilon(f).unwrap() - eps).abs() < 1e-12);
    }

    #[test]
    fn optimal_rates_sit_on_the_dp_boundary() {
        let eps = 3f64.ln();
        let (tpr, fpr) = optimal_attack_rates(eps);
        assert!((tpr - 0.75).abs() < 1e-12);
        assert!((fpr - 0.25).abs() < 1e-12);
        // tpr = e^eps * fpr exactly on the boundary
        assert!((tpr - eps.exp() * fpr).abs() < 1e-12);
    }

    #[test]
    fn empirical_flip_rate_matches() {
        let bits = vec![true; 20_000];
        let eps = 1.0;
        let out = randomize(&bits, eps, 7).unwrap();
        let flipped = out.iter().filter(|&&b| !b).count() as f64 / bits.len() as f64;
        let expect = flip_probability(eps).unwrap();
        let se = (expect * (1.0 - expect) / bits.len() as f64).sqrt();
        assert!((flipped - expect).abs() < 3.0 * se);
    }

    #[test]
    fn zero_epsilon_is_a_coin_flip() {
        assert!((flip_probability(0.0).unwrap() - 0.5).abs() < 1e-12);
    }
}
