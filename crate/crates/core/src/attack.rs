//! Membership-inference scorers and the two evaluation protocols: the
//! correct full-universe game and the subset-restricted S ∪ S' evaluation,
//! kept deliberately so the protocol gap can be measured.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ExampleId, MembershipChallenge, Universe};
use crate::error::{Error, Result};
use crate::learners::{evaluate, ModelArtifact};
use crate::pipeline::{run_pipeline, PipelineDescriptor};
use crate::seed;
use crate::stats::normal_log_pdf;

/// One real-valued score per universe example; higher = more member-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub scorer: String,
    pub model_hash: String,
    /// How many per-example Gaussian fits hit the variance floor (LiRA only).
    pub var_floor_hits: usize,
}

impl ScoreSet {
    fn new(scores: Vec<f64>, scorer: &str, model_hash: String, var_floor_hits: usize) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("scores must be finite".into()));
        }
        Ok(ScoreSet {
            scores,
            scorer: scorer.into(),
            model_hash,
            var_floor_hits,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Baseline scorer: score(x) = -loss(x).
pub fn score_loss_threshold(model: &ModelArtifact, universe: &Universe) -> Result<ScoreSet> {
    let records = evaluate(model, universe.as_dataset())?;
    let scores = records.into_iter().map(|r| -r.loss).collect();
    ScoreSet::new(
        scores,
        "loss_threshold",
        model.provenance.dataset_sha256.clone(),
        0,
    )
}

/// A shadow model together with the challenge it was trained under.
#[derive(Debug, Clone)]
pub struct ShadowMember {
    pub challenge: MembershipChallenge,
    pub model: ModelArtifact,
}

/// Shadow models covering every universe example from both sides.
#[derive(Debug, Clone)]
pub struct ShadowEnsemble {
    shadows: Vec<ShadowMember>,
}

impl ShadowEnsemble {
    /// Validate the coverage invariant: every example IN at least one shadow
    /// and OUT of at least one.
    pub fn from_members(shadows: Vec<ShadowMember>, universe_len: usize) -> Result<Self> {
        if shadows.len() < 2 {
            return Err(Error::Validation("need at least two shadows".into()));
        }
        for s in &shadows {
            if s.challenge.len() != universe_len {
                return Err(Error::Validation("shadow challenge does not cover the universe".into()));
            }
        }
        for id in 0..universe_len {
            let ins = shadows.iter().filter(|s| s.challenge.is_member(id)).count();
            if ins == 0 || ins == shadows.len() {
                return Err(Error::Config(format!(
                    "example {id} lacks IN/OUT coverage across {} shadows",
                    shadows.len()
                )));
            }
        }
        Ok(ShadowEnsemble { shadows })
    }

    pub fn members(&self) -> &[ShadowMember] {
        &self.shadows
    }

    pub fn len(&self) -> usize {
        self.shadows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shadows.is_empty()
    }
}

const SHADOW_TAG: u64 = 0x73686164;
const MAX_COVERAGE_ATTEMPTS: u64 = 8;

/// Train `n` shadows with fresh membership challenges under the same
/// pipeline as the target. Seed batches are re-drawn (bounded retries) until
/// the coverage invariant holds.
pub fn train_shadows(
    universe: &Universe,
    descriptor: &PipelineDescriptor,
    n: usize,
    base_seed: u64,
) -> Result<ShadowEnsemble> {
    if n < 2 {
        return Err(Error::Validation("need at least two shadows".into()));
    }
    let mut last_err = None;
    for attempt in 0..MAX_COVERAGE_ATTEMPTS {
        let mut shadows = Vec::with_capacity(n);
        for i in 0..n {
            let shadow_seed = seed::derive2(base_seed, SHADOW_TAG ^ attempt, i as u64);
            let challenge = crate::data::sample_membership(
                universe,
                descriptor.sampling_rate,
                shadow_seed,
            )?;
            let run = run_pipeline(universe, &challenge, descriptor, shadow_seed)?;
            shadows.push(ShadowMember {
                challenge,
                model: run.model,
            });
        }
        match ShadowEnsemble::from_members(shadows, universe.len()) {
            Ok(e) => return Ok(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Config(format!(
        "shadow coverage unsatisfiable within {MAX_COVERAGE_ATTEMPTS} attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// LiRA knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiraOptions {
    /// Confidences are clamped to [clamp, 1-clamp] before the logit.
    pub confidence_clamp: f64,
    /// Variance floor for degenerate per-example fits.
    pub var_floor: f64,
}

impl Default for LiraOptions {
    fn default() -> Self {
        LiraOptions {
            confidence_clamp: 1e-9,
            var_floor: 1e-6,
        }
    }
}

fn logit_confidence(model: &ModelArtifact, universe: &Universe, clamp: f64) -> Result<Vec<f64>> {
    let records = evaluate(model, universe.as_dataset())?;
    Ok(records
        .iter()
        .enumerate()
        .map(|(id, r)| {
            let p = r.confidence[universe.label(id)].clamp(clamp, 1.0 - clamp);
            (p / (1.0 - p)).ln()
        })
        .collect())
}

fn gaussian_fit(values: &[f64], var_floor: f64) -> (f64, f64, bool) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < var_floor {
        (mean, var_floor, true)
    } else {
        (mean, var, false)
    }
}

/// Likelihood-ratio attack: per example, fit Gaussians to the
/// logit-transformed confidences from IN- and OUT-shadows; score the target
/// value by the log-likelihood ratio of the two fits.
pub fn score_lira(
    target: &ModelArtifact,
    universe: &Universe,
    shadows: &ShadowEnsemble,
    opts: LiraOptions,
) -> Result<ScoreSet> {
    let target_values = logit_confidence(target, universe, opts.confidence_clamp)?;
    let shadow_values: Vec<Vec<f64>> = shadows
        .members()
        .iter()
        .map(|s| logit_confidence(&s.model, universe, opts.confidence_clamp))
        .collect::<Result<_>>()?;

    let mut scores = Vec::with_capacity(universe.len());
    let mut floor_hits = 0usize;
    for id in 0..universe.len() {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (s, values) in shadows.members().iter().zip(&shadow_values) {
            if s.challenge.is_member(id) {
                ins.push(values[id]);
            } else {
                outs.push(values[id]);
            }
        }
        let (mu_in, var_in, floored_in) = gaussian_fit(&ins, opts.var_floor);
        let (mu_out, var_out, floored_out) = gaussian_fit(&outs, opts.var_floor);
        floor_hits += usize::from(floored_in) + usize::from(floored_out);
        let t = target_values[id];
        scores.push(
            normal_log_pdf(t, mu_in, var_in.sqrt()) - normal_log_pdf(t, mu_out, var_out.sqrt()),
        );
    }
    ScoreSet::new(
        scores,
        "lira",
        target.provenance.dataset_sha256.clone(),
        floor_hits,
    )
}

/// Outcome of a membership-guessing evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub success_rate: f64,
    pub guesses: Vec<bool>,
}

/// The correct protocol: guess member iff score > threshold and average the
/// 0/1 correctness over every example of U.
pub fn evaluate_full_universe(
    scores: &ScoreSet,
    challenge: &MembershipChallenge,
    threshold: f64,
) -> Result<EvalOutcome> {
    if scores.len() != challenge.len() {
        return Err(Error::Validation(format!(
            "{} scores for a universe of {}",
            scores.len(),
            challenge.len()
        )));
    }
    let guesses: Vec<bool> = scores.scores.iter().map(|&s| s > threshold).collect();
    let correct = guesses
        .iter()
        .enumerate()
        .filter(|(id, &g)| g == challenge.is_member(*id))
        .count();
    Ok(EvalOutcome {
        success_rate: correct as f64 / guesses.len() as f64,
        guesses,
    })
}

/// The flawed protocol: accuracy measured only over S ∪ S', with membership
/// defined by selection into S. Implemented deliberately for the comparison
/// experiment.
pub fn evaluate_subset_restricted(
    scores: &ScoreSet,
    s_ids: &[ExampleId],
    s_prime_ids: &[ExampleId],
    threshold: f64,
) -> Result<EvalOutcome> {
    if s_ids.len() != s_prime_ids.len() {
        return Err(Error::Validation(format!(
            "|S| = {} but |S'| = {}",
            s_ids.len(),
            s_prime_ids.len()
        )));
    }
    if s_ids.is_empty() {
        return Err(Error::Validation("subsets are empty".into()));
    }
    let s_set: std::collections::HashSet<_> = s_ids.iter().collect();
    if s_prime_ids.iter().any(|id| s_set.contains(id)) {
        return Err(Error::Validation("S and S' must be disjoint".into()));
    }
    let mut guesses = Vec::with_capacity(2 * s_ids.len());
    let mut correct = 0usize;
    for &id in s_ids {
        let g = score_of(scores, id)? > threshold;
        correct += usize::from(g);
        guesses.push(g);
    }
    for &id in s_prime_ids {
        let g = score_of(scores, id)? > threshold;
        correct += usize::from(!g);
        guesses.push(g);
    }
    Ok(EvalOutcome {
        success_rate: correct as f64 / guesses.len() as f64,
        guesses,
    })
}

fn score_of(scores: &ScoreSet, id: ExampleId) -> Result<f64> {
    scores
        .scores
        .get(id)
        .copied()
        .ok_or_else(|| Error::Validation(format!("id {id} outside score set")))
}

/// Draw the non-member comparison set S' for the flawed protocol: |S|
/// examples uniformly from T \ S, fresh seed.
pub fn sample_s_prime(
    challenge: &MembershipChallenge,
    s_ids: &[ExampleId],
    draw_seed: u64,
) -> Result<Vec<ExampleId>> {
    let s_set: std::collections::HashSet<_> = s_ids.iter().collect();
    let candidates: Vec<ExampleId> = challenge
        .member_ids()
        .into_iter()
        .filter(|id| !s_set.contains(id))
        .collect();
    if candidates.len() < s_ids.len() {
        return Err(Error::Validation(format!(
            "T \\ S has {} examples, need {}",
            candidates.len(),
            s_ids.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(draw_seed, 0x73707269));
    let picked = rand::seq::index::sample(&mut rng, candidates.len(), s_ids.len());
    let mut out: Vec<ExampleId> = picked.into_iter().map(|i| candidates[i]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Pick the guess threshold maximizing advantage on held-out (score, bit)
/// pairs — shadow data, never the target's own challenge. Deterministic:
/// the highest-threshold maximizer wins ties.
pub fn select_threshold_max_advantage(scores: &[f64], member_bits: &[bool]) -> f64 {
    assert_eq!(scores.len(), member_bits.len());
    let n = scores.len();
    let n_pos = member_bits.iter().filter(|&&b| b).count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Cut above everything: guess nobody a member.
    let mut best_threshold = scores[order[0]] + 1.0;
    let mut best_correct = n - n_pos;

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < n {
        let group_score = scores[order[i]];
        while i < n && scores[order[i]] == group_score {
            if member_bits[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // threshold between this tie group and the next (or below min)
        let threshold = if i < n {
            0.5 * (group_score + scores[order[i]])
        } else {
            group_score - 1.0
        };
        let correct = tp + (n - n_pos - fp);
        if correct > best_correct {
            best_correct = correct;
            best_threshold = threshold;
        }
    }
    best_threshold
}

/// Score sets export as CSV (id, score, member_bit).
pub fn write_scores_csv<W: Write>(
    mut writer: W,
    scores: &ScoreSet,
    challenge: &MembershipChallenge,
) -> Result<()> {
    if scores.len() != challenge.len() {
        return Err(Error::Validation("scores and challenge must align".into()));
    }
    writeln!(writer, "id,score,member_bit").map_err(|e| Error::Serialize(e.to_string()))?;
    for (id, s) in scores.scores.iter().enumerate() {
        writeln!(
            writer,
            "{id},{s:?},{}",
            u8::from(challenge.is_member(id))
        )
        .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::condense_random_subset;
    use rand::Rng;
    use crate::data::{generate_universe, sample_membership, UniverseSpec};
    use crate::learners::{train_memorizing, train_sgd, ModelKind, SgdHyper};
    use crate::metrics::roc_curve;
    use crate::pipeline::{CondenserSpec, TrainerSpec};

    fn universe(n: usize, seed: u64) -> Universe {
        generate_universe(&UniverseSpec {
            n,
            d: 4,
            k: 2,
            separation: 3.0,
            noise: 1.0,
            seed,
        })
        .unwrap()
    }

    fn memorize_pipeline() -> PipelineDescriptor {
        PipelineDescriptor {
            sampling_rate: 0.5,
            condenser: CondenserSpec::None,
            trainer: TrainerSpec::Memorizing,
        }
    }

    #[test]
    fn members_receive_the_maximal_score() {
        let u = universe(80, 1);
        let ch = sample_membership(&u, 0.5, 2).unwrap();
        let t = u.subset(&ch.member_ids()).unwrap();
        let model = train_memorizing(&t).unwrap();
        let scores = score_loss_threshold(&model, &u).unwrap();
        let max = scores.scores.iter().cloned().fold(f64::MIN, f64::max);
        for id in ch.member_ids() {
            assert_eq!(scores.scores[id], max);
            assert_eq!(scores.scores[id], 0.0);
        }
    }

    #[test]
    fn untrained_model_scores_are_chance_level() {
        let mut aucs = Vec::new();
        for s in 0..20u64 {
            let u = universe(300, s);
            let ch = sample_membership(&u, 0.5, s + 100).unwrap();
            let t = u.subset(&ch.member_ids()).unwrap();
            let hyper = SgdHyper {
                model: ModelKind::Logistic,
                lr: 0.1,
                epochs: 0,
                batch: 0,
            };
            let model = train_sgd(&t, &hyper, s).unwrap();
            let scores = score_loss_threshold(&model, &u).unwrap();
            aucs.push(roc_curve(&scores.scores, ch.bits()).unwrap().auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "mean AUC {mean}");
    }

    #[test]
    fn monotone_transform_preserves_roc() {
        let u = universe(100, 3);
        let ch = sample_membership(&u, 0.5, 4).unwrap();
        let t = u.subset(&ch.member_ids()).unwrap();
        let model = train_memorizing(&t).unwrap();
        let scores = score_loss_threshold(&model, &u).unwrap();
        let transformed: Vec<f64> = scores.scores.iter().map(|s| s.exp() * 2.0 + 1.0).collect();
        let a = roc_curve(&scores.scores, ch.bits()).unwrap();
        let b = roc_curve(&transformed, ch.bits()).unwrap();
        assert_eq!(a.auc, b.auc);
    }

    #[test]
    fn complementary_challenges_cover_everything() {
        let u = universe(40, 5);
        let bits: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let inv: Vec<bool> = bits.iter().map(|b| !b).collect();
        let make = |bits: Vec<bool>| {
            let ch = MembershipChallenge::from_bits(bits, 0.5, 0);
            let t = u.subset(&ch.member_ids()).unwrap();
            ShadowMember {
                challenge: ch,
                model: train_memorizing(&t).unwrap(),
            }
        };
        let ensemble = ShadowEnsemble::from_members(vec![make(bits), make(inv)], 40).unwrap();
        assert_eq!(ensemble.len(), 2);
    }

    #[test]
    fn coverage_violation_is_rejected() {
        let u = universe(40, 6);
        let all = vec![true; 40];
        let half: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let make = |bits: Vec<bool>| {
            let ch = MembershipChallenge::from_bits(bits, 0.5, 0);
            let t = u.subset(&ch.member_ids()).unwrap();
            ShadowMember {
                challenge: ch,
                model: train_memorizing(&t).unwrap(),
            }
        };
        assert!(ShadowEnsemble::from_members(vec![make(all), make(half)], 40).is_err());
    }

    #[test]
    fn shadow_training_covers_and_is_seedwise_disjoint() {
        let u = universe(60, 7);
        let ensemble = train_shadows(&u, &memorize_pipeline(), 8, 11).unwrap();
        assert_eq!(ensemble.len(), 8);
        // IN frequencies near p across independently seeded challenges.
        let mut in_counts = vec![0usize; u.len()];
        let total = 400usize;
        for r in 0..total {
            let ch = sample_membership(&u, 0.5, 5000 + r as u64).unwrap();
            for id in 0..u.len() {
                in_counts[id] += usize::from(ch.is_member(id));
            }
        }
        let p = 0.5;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        for (id, &c) in in_counts.iter().enumerate() {
            let freq = c as f64 / total as f64;
            assert!((freq - p).abs() <= 4.0 * se, "id {id}: {freq}");
        }
    }

    #[test]
    fn coverage_retries_exhaust_cleanly() {
        // p = 1 keeps every example IN every shadow, OUT coverage can never hold.
        let u = universe(20, 8);
        let descr = PipelineDescriptor {
            sampling_rate: 1.0,
            ..memorize_pipeline()
        };
        assert!(matches!(
            train_shadows(&u, &descr, 2, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn lira_identical_fits_score_zero() {
        let values = [0.3, 0.3, 0.3];
        let (mu, var, floored) = gaussian_fit(&values, 1e-6);
        assert!(floored);
        let s = normal_log_pdf(0.3, mu, var.sqrt()) - normal_log_pdf(0.3, mu, var.sqrt());
        assert_eq!(s, 0.0);
    }

    #[test]
    fn lira_orders_by_likelihood() {
        // target at the OUT mean with IN far away -> negative score
        let (mu_in, var_in, _) = gaussian_fit(&[10.0, 10.2, 9.8], 1e-6);
        let (mu_out, var_out, _) = gaussian_fit(&[0.0, 0.2, -0.2], 1e-6);
        let t = 0.0;
        let s = normal_log_pdf(t, mu_in, var_in.sqrt()) - normal_log_pdf(t, mu_out, var_out.sqrt());
        assert!(s < 0.0);
    }

    #[test]
    fn lira_beats_or_ties_threshold_attack_on_memorizing_pipeline() {
        // Paired one-sided sign test over 20 seeds: under H0 (win prob 1/2)
        // P(X >= 15) = 0.0207 < 0.05, so 15 wins-or-ties reject H0.
        let mut wins = 0usize;
        for s in 0..20u64 {
            let u = universe(80, 200 + s);
            let ch = sample_membership(&u, 0.5, 300 + s).unwrap();
            let t = u.subset(&ch.member_ids()).unwrap();
            let target = train_memorizing(&t).unwrap();
            let shadows = train_shadows(&u, &memorize_pipeline(), 16, 400 + s).unwrap();
            let lira = score_lira(&target, &u, &shadows, LiraOptions::default()).unwrap();
            let thresh = score_loss_threshold(&target, &u).unwrap();
            let auc_lira = roc_curve(&lira.scores, ch.bits()).unwrap().auc;
            let auc_thresh = roc_curve(&thresh.scores, ch.bits()).unwrap().auc;
            if auc_lira >= auc_thresh - 1e-12 {
                wins += 1;
            }
        }
        assert!(wins >= 15, "LiRA >= threshold in only {wins}/20 seeds");
    }

    #[test]
    fn full_universe_perfect_scorer() {
        let u = universe(50, 9);
        let ch = sample_membership(&u, 0.5, 10).unwrap();
        let scores: Vec<f64> = (0..u.len())
            .map(|id| if ch.is_member(id) { 1.0 } else { -1.0 })
            .collect();
        let set = ScoreSet::new(scores, "oracle", String::new(), 0).unwrap();
        let out = evaluate_full_universe(&set, &ch, 0.0).unwrap();
        assert_eq!(out.success_rate, 1.0);
    }

    #[test]
    fn full_universe_constant_scores_are_chance() {
        // Exact-CDF oracle: Bin(4000, 0.5)/4000 falls in [0.474, 0.526]
        // with probability > 0.999 (the same oracle as the data module).
        let u = universe(200, 11);
        let set = ScoreSet::new(vec![0.0; 200], "const", String::new(), 0).unwrap();
        let mut total_correct = 0usize;
        let reps = 20usize;
        for r in 0..reps {
            let ch = sample_membership(&u, 0.5, 500 + r as u64).unwrap();
            let out = evaluate_full_universe(&set, &ch, 1.0).unwrap();
            total_correct += (out.success_rate * 200.0).round() as usize;
        }
        let rate = total_correct as f64 / (200 * reps) as f64;
        assert!((rate - 0.5).abs() < 0.026, "rate {rate}");
    }

    #[test]
    fn full_universe_invariant_under_permutation() {
        let u = universe(60, 12);
        let ch = sample_membership(&u, 0.5, 13).unwrap();
        let mut rng = seed::rng(3);
        let scores: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let set = ScoreSet::new(scores.clone(), "r", String::new(), 0).unwrap();
        let base = evaluate_full_universe(&set, &ch, 0.5).unwrap().success_rate;

        let mut perm: Vec<usize> = (0..60).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let p_scores: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let p_bits: Vec<bool> = perm.iter().map(|&i| ch.is_member(i)).collect();
        let p_set = ScoreSet::new(p_scores, "r", String::new(), 0).unwrap();
        let p_ch = MembershipChallenge::from_bits(p_bits, 0.5, 0);
        let permuted = evaluate_full_universe(&p_set, &p_ch, 0.5).unwrap().success_rate;
        assert_eq!(base, permuted);
    }

    // Exhaustive expectation oracle: enumerate every membership mask of a
    // small universe. The subset-oracle attacker (guess member iff x in S)
    // scores (|S| + n - |T|)/n, so E[advantage] = 2*r*p = r at p = 0.5 up to
    // the rounding of |S|.
    #[test]
    fn subset_oracle_attacker_advantage_is_r_ipc() {
        let n = 12usize;
        let r = 0.25;
        let p = 0.5f64;
        let mut e_adv = 0.0;
        for mask in 0u32..(1 << n) {
            let t_size = mask.count_ones() as usize;
            let m = (r * t_size as f64 + 0.5).floor() as usize;
            let weight = p.powi(t_size as i32) * (1.0 - p).powi((n - t_size) as i32);
            let success = (m + n - t_size) as f64 / n as f64;
            e_adv += weight * crate::metrics::attack_advantage(success);
        }
        assert!((e_adv - r).abs() <= 1.0 / n as f64, "exhaustive E[adv] = {e_adv}");

        // Monte-Carlo check of the full machinery at |U| = 10^4.
        let universe = universe(10_000, 14);
        let ch = sample_membership(&universe, 0.5, 15).unwrap();
        let t = universe.subset(&ch.member_ids()).unwrap();
        let s = condense_random_subset(&t, 0.01, false, 16).unwrap();
        let s_set: std::collections::HashSet<_> = s.data.ids().iter().copied().collect();
        let scores: Vec<f64> = (0..universe.len())
            .map(|id| if s_set.contains(&id) { 1.0 } else { -1.0 })
            .collect();
        let set = ScoreSet::new(scores, "subset_oracle", String::new(), 0).unwrap();
        let out = evaluate_full_universe(&set, &ch, 0.0).unwrap();
        let adv = crate::metrics::attack_advantage(out.success_rate);
        // |S| = 50 exactly; randomness only in |T|: 3 SE of the advantage.
        let se = 2.0 * 0.5 / (universe.len() as f64).sqrt();
        assert!((adv - 0.01).abs() <= 3.0 * se, "advantage {adv}");
        assert!(adv <= 2.0 * 0.01 + 3.0 * se, "paper cap 2*r_ipc violated: {adv}");
    }

    #[test]
    fn subset_restricted_perfect_detector() {
        let u = universe(100, 17);
        let ch = sample_membership(&u, 0.5, 18).unwrap();
        let t = u.subset(&ch.member_ids()).unwrap();
        let s = condense_random_subset(&t, 0.1, false, 19).unwrap();
        let s_ids = s.data.ids().to_vec();
        let s_prime = sample_s_prime(&ch, &s_ids, 20).unwrap();
        let s_set: std::collections::HashSet<_> = s_ids.iter().copied().collect();
        let scores: Vec<f64> = (0..u.len())
            .map(|id| if s_set.contains(&id) { 1.0 } else { -1.0 })
            .collect();
        let set = ScoreSet::new(scores, "oracle", String::new(), 0).unwrap();
        let out = evaluate_subset_restricted(&set, &s_ids, &s_prime, 0.0).unwrap();
        assert_eq!(out.success_rate, 1.0);
        assert_eq!(crate::metrics::attack_advantage(out.success_rate), 1.0);
    }

    #[test]
    fn subset_restricted_validates_inputs() {
        let set = ScoreSet::new(vec![0.0; 10], "c", String::new(), 0).unwrap();
        assert!(evaluate_subset_restricted(&set, &[0, 1], &[2], 0.0).is_err());
        assert!(evaluate_subset_restricted(&set, &[0, 1], &[1, 2], 0.0).is_err());
        assert!(evaluate_subset_restricted(&set, &[], &[], 0.0).is_err());
    }

    #[test]
    fn s_prime_comes_from_members_outside_s() {
        let u = universe(100, 21);
        let ch = sample_membership(&u, 0.5, 22).unwrap();
        let t = u.subset(&ch.member_ids()).unwrap();
        let s = condense_random_subset(&t, 0.2, false, 23).unwrap();
        let s_ids = s.data.ids().to_vec();
        let s_prime = sample_s_prime(&ch, &s_ids, 24).unwrap();
        assert_eq!(s_prime.len(), s_ids.len());
        let s_set: std::collections::HashSet<_> = s_ids.iter().collect();
        for id in &s_prime {
            assert!(ch.is_member(*id));
            assert!(!s_set.contains(id));
        }
    }

    // Protocol coincidence: with S = T, S' = U \ T and |T| = |U|/2 the two
    // evaluators are the same computation.
    #[test]
    fn evaluators_agree_when_subset_is_the_whole_universe() {
        let bits: Vec<bool> = (0..40).map(|i| i < 20).collect();
        let ch = MembershipChallenge::from_bits(bits, 0.5, 0);
        let mut rng = seed::rng(26);
        let scores: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let set = ScoreSet::new(scores, "r", String::new(), 0).unwrap();
        let s_ids: Vec<usize> = (0..20).collect();
        let s_prime: Vec<usize> = (20..40).collect();
        for threshold in [0.2, 0.5, 0.9] {
            let full = evaluate_full_universe(&set, &ch, threshold).unwrap();
            let sub = evaluate_subset_restricted(&set, &s_ids, &s_prime, threshold).unwrap();
            assert_eq!(full.success_rate, sub.success_rate);
        }
    }

    #[test]
    fn threshold_selection_maximizes_advantage() {
        let scores = [0.9, 0.8, 0.41, 0.4, 0.1, 0.0];
        let bits = [true, true, true, false, false, false];
        let tau = select_threshold_max_advantage(&scores, &bits);
        assert!(tau > 0.4 && tau < 0.41, "tau = {tau}");
        // applying it reproduces the perfect split
        let set = ScoreSet::new(scores.to_vec(), "t", String::new(), 0).unwrap();
        let ch = MembershipChallenge::from_bits(bits.to_vec(), 0.5, 0);
        let out = evaluate_full_universe(&set, &ch, tau).unwrap();
        assert_eq!(out.success_rate, 1.0);
    }

    #[test]
    fn scores_csv_layout() {
        let set = ScoreSet::new(vec![0.25, -1.5], "t", String::new(), 0).unwrap();
        let ch = MembershipChallenge::from_bits(vec![true, false], 0.5, 0);
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &set, &ch).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,score,member_bit\n0,0.25,1\n1,-1.5,0\n");
    }
}
