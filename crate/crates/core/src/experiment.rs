//! Config-driven experiment runs composing data -> condense -> learners ->
//! attack -> metrics/audit. Idempotent given the seed; trial fan-out is
//! order-independent.

use rand::Rng;

use crate::accountant::calibrate_sigma;
use crate::attack::{
    evaluate_full_universe, evaluate_subset_restricted, sample_s_prime, score_loss_threshold,
    select_threshold_max_advantage,
};
use crate::audit::{run_audit, AuditPipeline, AuditStatistic, DpVerdict};
use crate::condense::{condense_dm_linear, init_gaussian_centered, init_subset_of_t, mean_gap, InitKind};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::data::{
    build_audit_pair, generate_universe, sample_membership, Dataset, MembershipChallenge,
    Universe,
};
use crate::error::{Error, Result};
use crate::learners::{
    evaluate, exponential_mechanism_log_probs, ClipMode, DpSgdHyper, ModelArtifact, ModelKind,
    SgdHyper,
};
use crate::metrics::{attack_advantage, eps_estimates, roc_curve, subgroup_metrics};
use crate::parallel::run_indexed;
use crate::pipeline::{run_pipeline, CondenserSpec, PipelineDescriptor, TrainerSpec};
use crate::randomized_response::randomize;
use crate::report::{
    AuditResults, DmPropertiesResults, DpsgdTableResults, EmCheckResults, EmPairCheck, EpsReport,
    EpsEstimationResults, ExperimentResults, ProtocolGapResults, ProtocolGapTrial, Report,
    RrRepeat, SubgroupDisparity, TableRow,
};
use crate::seed;

const UNIVERSE_TAG: u64 = 0x756e6976;
const TRIAL_TAG: u64 = 0x7472696c;
const SHADOW_TAG: u64 = 0x73686477;
const CHALLENGE_TAG: u64 = 0x6368616c;
const SPRIME_TAG: u64 = 0x73707233;
const TEST_TAG: u64 = 0x74657374;
const RR_TAG: u64 = 0x72727270;
const SUBGROUP_TAG: u64 = 0x73756270;
const AUDIT_DM_TAG: u64 = 0x6175646d;
const AUDIT_DP_TAG: u64 = 0x61756470;
const EM_TAG: u64 = 0x656d7462;

/// Execute the experiment named by the config and assemble its report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let started = std::time::Instant::now();
    let (results, violations) = match config.kind {
        ExperimentKind::ProtocolGap => protocol_gap(config)?,
        ExperimentKind::DmProperties => dm_properties(config)?,
        ExperimentKind::DpsgdTable => dpsgd_table(config)?,
        ExperimentKind::EpsEstimation => eps_estimation(config)?,
        ExperimentKind::Audit => audit_experiment(config)?,
        ExperimentKind::EmCheck => em_check(config)?,
    };
    let mut report = Report::new(config.clone(), results);
    report.invariant_violations = violations;
    report.provenance.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// Pipeline runs used only for threshold calibration; unlike LiRA shadows,
// no IN/OUT coverage is required.
struct ShadowRun {
    challenge: MembershipChallenge,
    model: ModelArtifact,
    condensed_ids: Option<Vec<usize>>,
}

fn shadow_runs(
    universe: &Universe,
    descriptor: &PipelineDescriptor,
    count: usize,
    base_seed: u64,
) -> Result<Vec<ShadowRun>> {
    (0..count)
        .map(|j| {
            let s = seed::derive2(base_seed, SHADOW_TAG, j as u64);
            let challenge = sample_membership(universe, descriptor.sampling_rate, s)?;
            let run = run_pipeline(universe, &challenge, descriptor, s)?;
            let condensed_ids = run.condensed.as_ref().map(|c| c.data.ids().to_vec());
            Ok(ShadowRun {
                challenge,
                model: run.model,
                condensed_ids,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// protocol_gap
// ---------------------------------------------------------------------------

struct GapTrialOutput {
    record: ProtocolGapTrial,
    example: Option<(Vec<f64>, Vec<bool>)>,
}

fn protocol_gap(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let universe = generate_universe(&cfg.universe.to_spec(seed::derive(cfg.seed, UNIVERSE_TAG)))?;
    let descriptor = PipelineDescriptor {
        sampling_rate: cfg.sampling_rate,
        condenser: CondenserSpec::RandomSubset {
            r_ipc: cfg.r_ipc,
            stratified: false,
        },
        trainer: TrainerSpec::Memorizing,
    };

    let trial = |i: usize| -> Result<GapTrialOutput> {
        let tseed = seed::derive2(cfg.seed, TRIAL_TAG, i as u64);
        let challenge =
            sample_membership(&universe, cfg.sampling_rate, seed::derive(tseed, CHALLENGE_TAG))?;
        let run = run_pipeline(&universe, &challenge, &descriptor, tseed)?;
        let s_ids = run
            .condensed
            .as_ref()
            .expect("random-subset condenser always produces a subset")
            .data
            .ids()
            .to_vec();
        let scores = score_loss_threshold(&run.model, &universe)?;

        // Thresholds come from shadow pipelines, never the target challenge.
        let shadows = shadow_runs(&universe, &descriptor, cfg.shadows, tseed)?;
        let mut full_scores = Vec::new();
        let mut full_bits = Vec::new();
        let mut sub_scores = Vec::new();
        let mut sub_bits = Vec::new();
        for (j, sh) in shadows.iter().enumerate() {
            let sh_scores = score_loss_threshold(&sh.model, &universe)?;
            full_scores.extend_from_slice(&sh_scores.scores);
            full_bits.extend_from_slice(sh.challenge.bits());
            let sh_s = sh
                .condensed_ids
                .as_ref()
                .expect("random-subset condenser always produces a subset");
            let sh_sprime = sample_s_prime(
                &sh.challenge,
                sh_s,
                seed::derive2(tseed, SPRIME_TAG, j as u64 + 1),
            )?;
            for &id in sh_s {
                sub_scores.push(sh_scores.scores[id]);
                sub_bits.push(true);
            }
            for &id in &sh_sprime {
                sub_scores.push(sh_scores.scores[id]);
                sub_bits.push(false);
            }
        }
        let tau_full = select_threshold_max_advantage(&full_scores, &full_bits);
        let tau_sub = select_threshold_max_advantage(&sub_scores, &sub_bits);

        let s_prime = sample_s_prime(&challenge, &s_ids, seed::derive2(tseed, SPRIME_TAG, 0))?;
        let full = evaluate_full_universe(&scores, &challenge, tau_full)?;
        let sub = evaluate_subset_restricted(&scores, &s_ids, &s_prime, tau_sub)?;
        let example = if i == 0 {
            Some((scores.scores.clone(), challenge.bits().to_vec()))
        } else {
            None
        };
        Ok(GapTrialOutput {
            record: ProtocolGapTrial {
                trial: i,
                subset_advantage: attack_advantage(sub.success_rate),
                full_universe_advantage: attack_advantage(full.success_rate),
                subset_size: s_ids.len(),
            },
            example,
        })
    };

    let outputs: Vec<GapTrialOutput> = run_indexed(cfg.trials, cfg.jobs, trial)
        .into_iter()
        .collect::<Result<_>>()?;

    let subset_advs: Vec<f64> = outputs.iter().map(|o| o.record.subset_advantage).collect();
    let full_advs: Vec<f64> = outputs
        .iter()
        .map(|o| o.record.full_universe_advantage)
        .collect();
    let (mean_sub, _) = mean_and_sd(&subset_advs);
    let (mean_full, sd_full) = mean_and_sd(&full_advs);
    let ci_half = 1.96 * sd_full / (full_advs.len() as f64).sqrt();

    let (example_scores, example_bits) = outputs
        .iter()
        .find_map(|o| o.example.clone())
        .expect("trial 0 present");
    let example_roc = roc_curve(&example_scores, &example_bits)?;

    let results = ProtocolGapResults {
        trials: outputs.into_iter().map(|o| o.record).collect(),
        mean_subset_advantage: mean_sub,
        mean_full_universe_advantage: mean_full,
        full_universe_ci_half_width: ci_half,
        oracle_advantage_r_ipc: cfg.r_ipc,
        advantage_cap_two_r_ipc: 2.0 * cfg.r_ipc,
        example_roc_full_universe: example_roc,
        example_scores,
        example_member_bits: example_bits,
    };
    Ok((ExperimentResults::ProtocolGap(results), Vec::new()))
}

// ---------------------------------------------------------------------------
// dm_properties
// ---------------------------------------------------------------------------

fn dm_properties(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let universe = generate_universe(&cfg.universe.to_spec(seed::derive(cfg.seed, UNIVERSE_TAG)))?;
    let t = universe.as_dataset();
    let mean_t = t.feature_mean();
    let mut violations = Vec::new();

    let mut max_rel = 0.0f64;
    let mut gaps = Vec::new();
    let mut rng = seed::rng(seed::derive(cfg.seed, TRIAL_TAG));
    for i in 0..cfg.trials {
        let m = rng.random_range(2..=50usize);
        let init_seed = seed::derive2(cfg.seed, TRIAL_TAG, i as u64);
        let init = if i % 2 == 0 {
            init_subset_of_t(t, m.min(t.len()), init_seed)?
        } else {
            init_gaussian_centered(m, t.dim(), init_seed)?
        };
        if init.kind == InitKind::SubsetOfT {
            gaps.push(mean_gap(&init, t)?);
        }
        let s = condense_dm_linear(&init, t)?;
        let mean_s = s.data.feature_mean();
        for j in 0..t.dim() {
            let rel = (mean_s[j] - mean_t[j]).abs() / mean_t[j].abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    if max_rel > 1e-9 {
        violations.push(format!(
            "dm mean-matching exceeded 1e-9 relative tolerance: {max_rel}"
        ));
    }

    // Centered init on centered data: the transform must be the identity.
    let init = init_gaussian_centered(24, t.dim(), seed::derive(cfg.seed, 0xce17))?;
    let centered_t = init_gaussian_centered(128, t.dim(), seed::derive(cfg.seed, 0xce18))?.data;
    let s = condense_dm_linear(&init, &centered_t)?;
    let centered_identity = (0..init.data.len()).all(|i| {
        s.data
            .feature(i)
            .iter()
            .zip(init.data.feature(i))
            .all(|(a, b)| (a - b).abs() <= 1e-12)
    });
    if !centered_identity {
        violations.push("dm on centered inputs is not the identity".into());
    }

    // Replacing T by a one-example dataset holding exactly mean(T) must
    // reproduce S bit for bit: the transform sees T only through its mean.
    let init = init_gaussian_centered(16, t.dim(), seed::derive(cfg.seed, 0xce19))?;
    let s1 = condense_dm_linear(&init, t)?;
    let t_prime = Dataset::new(t.feature_mean(), vec![0], vec![0], t.dim(), t.num_classes())?;
    let s2 = condense_dm_linear(&init, &t_prime)?;
    let bitwise = s1
        .data
        .features_flat()
        .iter()
        .zip(s2.data.features_flat())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    if !bitwise {
        violations.push("dm output depends on T beyond its mean".into());
    }

    let (gap_mean, _) = mean_and_sd(&gaps);
    let results = DmPropertiesResults {
        pairs_checked: cfg.trials,
        max_mean_relative_error: max_rel,
        centered_identity_exact: centered_identity,
        t_replacement_bitwise_identical: bitwise,
        mean_gap_subset_mean: gap_mean,
        mean_gap_subset_max: gaps.iter().copied().fold(0.0, f64::max),
    };
    Ok((ExperimentResults::DmProperties(results), violations))
}

// ---------------------------------------------------------------------------
// dpsgd_table
// ---------------------------------------------------------------------------

fn accuracy(model: &ModelArtifact, data: &Dataset) -> Result<f64> {
    let recs = evaluate(model, data)?;
    let correct = recs
        .iter()
        .zip(data.labels())
        .filter(|(r, &y)| {
            r.confidence
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c == y)
                .unwrap_or(false)
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn dpsgd_table(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let pool = generate_universe(&cfg.universe.to_spec(seed::derive(cfg.seed, UNIVERSE_TAG)))?;
    let test = generate_universe(&cfg.universe.to_spec(seed::derive(cfg.seed, TEST_TAG)))?;
    let dp = &cfg.dpsgd;
    let sigma = match dp.sigma {
        Some(s) => s,
        None => calibrate_sigma(dp.target_epsilon, dp.delta, dp.sample_rate, dp.steps)?,
    };
    let sgd = TrainerSpec::Sgd(SgdHyper {
        model: ModelKind::Logistic,
        lr: dp.lr,
        epochs: 120,
        batch: 0,
    });
    let dpsgd_at = |noise: f64| {
        TrainerSpec::DpSgd(DpSgdHyper {
            model: ModelKind::Logistic,
            lr: dp.lr,
            steps: dp.steps,
            clip: ClipMode::L2 { c: dp.clip },
            noise_multiplier: noise,
            sample_rate: dp.sample_rate,
            delta: dp.delta,
            lot_size: None,
        })
    };
    let specs: Vec<(&str, CondenserSpec, TrainerSpec)> = vec![
        (
            "dm_linear (gaussian init)",
            CondenserSpec::DmLinear {
                init: InitKind::GaussianCentered,
                r_ipc: cfg.r_ipc,
            },
            sgd,
        ),
        (
            "dm_linear (subset init)",
            CondenserSpec::DmLinear {
                init: InitKind::SubsetOfT,
                r_ipc: cfg.r_ipc,
            },
            sgd,
        ),
        (
            "random_subset",
            CondenserSpec::RandomSubset {
                r_ipc: cfg.r_ipc,
                stratified: false,
            },
            sgd,
        ),
        ("sgd (full T)", CondenserSpec::None, sgd),
        ("dpsgd (calibrated)", CondenserSpec::None, dpsgd_at(sigma)),
        ("dpsgd (under-noised)", CondenserSpec::None, dpsgd_at(dp.weak_sigma)),
    ];

    let mut rows = Vec::with_capacity(specs.len());
    for (row_idx, (name, condenser, trainer)) in specs.iter().enumerate() {
        let descriptor = PipelineDescriptor {
            sampling_rate: cfg.sampling_rate,
            condenser: *condenser,
            trainer: *trainer,
        };
        let run_trial = |t: usize| -> Result<(f64, f64, Option<crate::accountant::PrivacyBudget>)> {
            let tseed = seed::derive2(cfg.seed, TRIAL_TAG ^ (row_idx as u64) << 8, t as u64);
            let challenge = sample_membership(&pool, cfg.sampling_rate, tseed)?;
            let run = run_pipeline(&pool, &challenge, &descriptor, tseed)?;
            let acc = accuracy(&run.model, test.as_dataset())?;
            let scores = score_loss_threshold(&run.model, &pool)?;
            let shadows = shadow_runs(&pool, &descriptor, cfg.shadows, tseed)?;
            let mut pooled_scores = Vec::new();
            let mut pooled_bits = Vec::new();
            for sh in &shadows {
                let sh_scores = score_loss_threshold(&sh.model, &pool)?;
                pooled_scores.extend_from_slice(&sh_scores.scores);
                pooled_bits.extend_from_slice(sh.challenge.bits());
            }
            let tau = select_threshold_max_advantage(&pooled_scores, &pooled_bits);
            let outcome = evaluate_full_universe(&scores, &challenge, tau)?;
            Ok((acc, attack_advantage(outcome.success_rate), run.model.budget))
        };
        let trials: Vec<(f64, f64, Option<crate::accountant::PrivacyBudget>)> =
            run_indexed(cfg.trials, cfg.jobs, run_trial)
                .into_iter()
                .collect::<Result<_>>()?;
        let accs: Vec<f64> = trials.iter().map(|t| t.0).collect();
        let advs: Vec<f64> = trials.iter().map(|t| t.1).collect();
        let budget = trials[0].2.clone();
        let (acc_mean, acc_sd) = mean_and_sd(&accs);
        let (adv_mean, adv_sd) = mean_and_sd(&advs);
        let (epsilon, formal, note) = match &budget {
            None => (None, false, "no privacy analysis".to_string()),
            Some(b) if b.is_non_private() => (None, false, "non-private (sigma = 0)".to_string()),
            Some(b) if b.is_vacuous(cfg.vacuous_threshold) => (
                b.epsilon,
                false,
                format!("vacuous (> {})", cfg.vacuous_threshold),
            ),
            Some(b) => (
                b.epsilon,
                true,
                format!("eps = {:.3}, delta = {:e}", b.epsilon.unwrap(), b.delta),
            ),
        };
        rows.push(TableRow {
            technique: name.to_string(),
            test_accuracy: acc_mean,
            test_accuracy_sd: acc_sd,
            epsilon,
            formal_guarantee: formal,
            budget_note: note,
            attack_advantage: adv_mean,
            attack_advantage_sd: adv_sd,
        });
    }

    let results = DpsgdTableResults {
        rows,
        delta: dp.delta,
    };
    Ok((ExperimentResults::DpsgdTable(results), Vec::new()))
}

// ---------------------------------------------------------------------------
// eps_estimation
// ---------------------------------------------------------------------------

fn eps_estimation(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let eps_cfg = &cfg.eps;
    let repeat = |i: usize| -> Result<RrRepeat> {
        let rseed = seed::derive2(cfg.seed, RR_TAG, i as u64);
        let mut rng = seed::rng(rseed);
        let bits: Vec<bool> = (0..eps_cfg.observations)
            .map(|_| rng.random::<f64>() < 0.5)
            .collect();
        let responses = randomize(&bits, eps_cfg.true_epsilon, seed::derive(rseed, 1))?;
        let scores: Vec<f64> = responses.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
        let roc = roc_curve(&scores, &bits)?;
        let est = eps_estimates(&roc, cfg.confidence)?;
        Ok(RrRepeat {
            repeat: i,
            eps_lower_bound: est.eps_lower,
            naive: est.eps_naive.map(crate::report::NaiveEps::new),
        })
    };
    let repeats: Vec<RrRepeat> = run_indexed(cfg.trials, cfg.jobs, repeat)
        .into_iter()
        .collect::<Result<_>>()?;
    let lb_exceed = repeats
        .iter()
        .filter(|r| r.eps_lower_bound > eps_cfg.true_epsilon)
        .count();
    let naive_exceed = repeats
        .iter()
        .filter(|r| matches!(&r.naive, Some(n) if n.value > eps_cfg.true_epsilon))
        .count();
    let lbs: Vec<f64> = repeats.iter().map(|r| r.eps_lower_bound).collect();
    let (mean_lb, _) = mean_and_sd(&lbs);

    // Subgroup disparity: a 10% slice with perfectly separable scores hiding
    // inside an otherwise uninformative score distribution.
    let mut rng = seed::rng(seed::derive(cfg.seed, SUBGROUP_TAG));
    let n = eps_cfg.subgroup_n;
    let g_size = ((eps_cfg.subgroup_fraction * n as f64).round() as usize).max(2);
    let mut scores = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let member = rng.random::<f64>() < 0.5;
        let score = if i < g_size {
            if member {
                0.5001 + 0.009 * rng.random::<f64>()
            } else {
                0.4999 - 0.009 * rng.random::<f64>()
            }
        } else {
            rng.random::<f64>()
        };
        scores.push(score);
        bits.push(member);
        groups.push(usize::from(i < g_size));
    }
    let global = eps_estimates(&roc_curve(&scores, &bits)?, cfg.confidence)?;
    let per_group = subgroup_metrics(&scores, &bits, &groups, cfg.confidence)?;
    let complement = per_group[0]
        .eps
        .as_ref()
        .ok_or_else(|| Error::Validation("complement group degenerate".into()))?;
    let subgroup = per_group[1]
        .eps
        .as_ref()
        .ok_or_else(|| Error::Validation("subgroup degenerate".into()))?;

    let results = EpsEstimationResults {
        true_epsilon: eps_cfg.true_epsilon,
        repeats,
        lb_exceed_count: lb_exceed,
        naive_exceed_count: naive_exceed,
        mean_eps_lower_bound: mean_lb,
        subgroup: SubgroupDisparity {
            global: EpsReport::from(&global),
            subgroup: EpsReport::from(subgroup),
            complement: EpsReport::from(complement),
            subgroup_minus_global_nats: subgroup.eps_lower - global.eps_lower,
        },
    };
    Ok((ExperimentResults::EpsEstimation(results), Vec::new()))
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

/// Universe with one class-0 example re-planted `offset_sigmas` noise units
/// from its class mean, so the Prop-4.4 mean dependence is visible.
pub fn planted_audit_universe(
    cfg: &ExperimentConfig,
) -> Result<(Universe, usize, usize)> {
    let spec = crate::data::UniverseSpec {
        n: cfg.audit.n,
        d: cfg.universe.d,
        k: cfg.universe.k,
        separation: cfg.universe.separation,
        noise: cfg.universe.noise,
        seed: seed::derive(cfg.seed, UNIVERSE_TAG ^ 0xaa),
    };
    let base = generate_universe(&spec)?;
    let class0: Vec<usize> = (0..base.len()).filter(|&i| base.label(i) == 0).collect();
    if class0.len() < 2 {
        return Err(Error::Validation("need two class-0 examples".into()));
    }
    let keep_id = class0[0];
    let extra_id = class0[1];

    let data = base.as_dataset();
    let mut features = data.features_flat().to_vec();
    let d = data.dim();
    // class-0 mean from the generator: separation/sqrt(2) on axis 0
    let mut target = vec![0.0; d];
    target[0] = cfg.universe.separation / f64::sqrt(2.0);
    target[d - 1] += cfg.audit.target_offset_sigmas * cfg.universe.noise;
    features[extra_id * d..(extra_id + 1) * d].copy_from_slice(&target);
    let planted = Universe::from_dataset(Dataset::new(
        features,
        data.labels().to_vec(),
        data.ids().to_vec(),
        d,
        data.num_classes(),
    )?)?;
    Ok((planted, keep_id, extra_id))
}

fn audit_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let (universe, keep_id, extra_id) = planted_audit_universe(cfg)?;
    let pair = build_audit_pair(&universe, 0, keep_id, extra_id)?;
    let a = &cfg.audit;
    let mut violations = Vec::new();

    let dm_pipeline = AuditPipeline {
        condenser: CondenserSpec::DmLinear {
            init: InitKind::GaussianCentered,
            r_ipc: a.dm_r_ipc,
        },
        trainer: None,
        statistic: AuditStatistic::MeanProjection,
    };
    let dm = run_audit(
        &dm_pipeline,
        &pair,
        cfg.trials,
        cfg.confidence,
        seed::derive(cfg.seed, AUDIT_DM_TAG),
        cfg.jobs,
    )?;

    let sigma = calibrate_sigma(a.dp_target_epsilon, a.dp_delta, 1.0, a.dp_steps)?;
    let dp_pipeline = AuditPipeline {
        condenser: CondenserSpec::None,
        trainer: Some(TrainerSpec::DpSgd(DpSgdHyper {
            model: ModelKind::Logistic,
            lr: a.dp_lr,
            steps: a.dp_steps,
            clip: ClipMode::L2 { c: a.dp_clip },
            noise_multiplier: sigma,
            sample_rate: 1.0,
            delta: a.dp_delta,
            // shared normalizer: the mechanism must not leak |D| vs |D'|
            lot_size: Some(pair.d.len() as f64),
        })),
        statistic: AuditStatistic::TargetLoss,
    };
    let dpsgd = run_audit(
        &dp_pipeline,
        &pair,
        cfg.trials,
        cfg.confidence,
        seed::derive(cfg.seed, AUDIT_DP_TAG),
        cfg.jobs,
    )?;
    if dpsgd.dp_check == Some(DpVerdict::Violated) {
        violations.push(format!(
            "dp-sgd audit violated the epsilon = {} trade-off region",
            a.dp_target_epsilon
        ));
    }

    let results = AuditResults {
        dm_init: InitKind::GaussianCentered,
        dm,
        dpsgd_sigma: sigma,
        dpsgd,
    };
    Ok((ExperimentResults::Audit(results), violations))
}

// ---------------------------------------------------------------------------
// em_check
// ---------------------------------------------------------------------------

fn multisets(space: usize, max_size: usize) -> Vec<Vec<usize>> {
    fn rec(space: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == space {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=budget {
            prefix.push(c);
            rec(space, budget - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(space, max_size, &mut Vec::new(), &mut out);
    out
}

fn em_check(cfg: &ExperimentConfig) -> Result<(ExperimentResults, Vec<String>)> {
    let em = &cfg.em;
    if em.space_values == 0 || em.grid_points == 0 {
        return Err(Error::Config("em space and grid must be nonempty".into()));
    }
    let bound = crate::accountant::exponential_mechanism_epsilon(0.0, em.loss_bound)?;

    // Loss tables l[grid][value] in [0, loss_bound]; the first one pins the
    // extremes, the rest are seeded draws.
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut fixed = vec![vec![0.0; em.space_values]; em.grid_points];
    for g in 0..em.grid_points {
        for v in 0..em.space_values {
            fixed[g][v] = match (g + v) % 3 {
                0 => 0.0,
                1 => em.loss_bound,
                _ => 0.5 * em.loss_bound,
            };
        }
    }
    tables.push(fixed);
    let mut rng = seed::rng(seed::derive(cfg.seed, EM_TAG));
    for _ in 0..em.random_tables {
        let t: Vec<Vec<f64>> = (0..em.grid_points)
            .map(|_| {
                (0..em.space_values)
                    .map(|_| em.loss_bound * rng.random::<f64>())
                    .collect()
            })
            .collect();
        tables.push(t);
    }

    let datasets = multisets(em.space_values, em.max_size);
    let total_size = |c: &[usize]| c.iter().sum::<usize>();
    let log_probs_of = |table: &[Vec<f64>], counts: &[usize]| -> Result<Vec<f64>> {
        let totals: Vec<f64> = table
            .iter()
            .map(|row| {
                row.iter()
                    .zip(counts)
                    .map(|(l, &c)| l * c as f64)
                    .sum::<f64>()
            })
            .collect();
        exponential_mechanism_log_probs(&totals)
    };
    let max_abs_diff = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };

    let mut checks: Vec<EmPairCheck> = Vec::new();
    for (ti, table) in tables.iter().enumerate() {
        for counts in &datasets {
            let base = log_probs_of(table, counts)?;
            // add/remove neighbors
            if total_size(counts) < em.max_size {
                for v in 0..em.space_values {
                    let mut bigger = counts.clone();
                    bigger[v] += 1;
                    let other = log_probs_of(table, &bigger)?;
                    checks.push(EmPairCheck {
                        table: ti,
                        from: format!("{counts:?}"),
                        to: format!("{bigger:?}"),
                        max_log_ratio: max_abs_diff(&base, &other),
                    });
                }
            }
            // replace-one neighbors
            for i in 0..em.space_values {
                if counts[i] == 0 {
                    continue;
                }
                for j in 0..em.space_values {
                    if i == j {
                        continue;
                    }
                    let mut swapped = counts.clone();
                    swapped[i] -= 1;
                    swapped[j] += 1;
                    let other = log_probs_of(table, &swapped)?;
                    checks.push(EmPairCheck {
                        table: ti,
                        from: format!("{counts:?}"),
                        to: format!("{swapped:?}"),
                        max_log_ratio: max_abs_diff(&base, &other),
                    });
                }
            }
        }
    }

    let pairs_checked = checks.len();
    let max_log_ratio = checks
        .iter()
        .map(|c| c.max_log_ratio)
        .fold(0.0, f64::max);
    let mut violations = Vec::new();
    if max_log_ratio > bound + 1e-9 {
        violations.push(format!(
            "exponential mechanism exceeded its bound: {max_log_ratio} > {bound}"
        ));
    }
    checks.sort_by(|a, b| b.max_log_ratio.total_cmp(&a.max_log_ratio));
    checks.truncate(10);

    let results = EmCheckResults {
        pairs_checked,
        max_log_ratio,
        epsilon_bound: bound,
        worst_pairs: checks,
    };
    Ok((ExperimentResults::EmCheck(results), violations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiset_enumeration_counts() {
        // sizes 0..=4 over 3 values: 1 + 3 + 6 + 10 + 15 = 35
        assert_eq!(multisets(3, 4).len(), 35);
        assert_eq!(multisets(2, 1).len(), 3);
    }

    #[test]
    fn em_check_respects_the_bound() {
        let cfg = ExperimentConfig::default_for(ExperimentKind::EmCheck);
        let report = run_experiment(&cfg).unwrap();
        assert!(report.invariant_violations.is_empty());
        match report.results {
            ExperimentResults::EmCheck(r) => {
                assert!(r.max_log_ratio <= r.epsilon_bound + 1e-9);
                assert!(r.pairs_checked > 100);
                assert_eq!(r.epsilon_bound, 2.0);
            }
            _ => panic!("wrong results variant"),
        }
    }

    #[test]
    fn reports_are_deterministic_modulo_wall_time() {
        let cfg = ExperimentConfig::default_for(ExperimentKind::EmCheck);
        let mut a = run_experiment(&cfg).unwrap();
        let mut b = run_experiment(&cfg).unwrap();
        a.provenance.wall_time_secs = 0.0;
        b.provenance.wall_time_secs = 0.0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn dm_properties_passes_cleanly() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::DmProperties);
        cfg.trials = 30;
        cfg.universe.n = 200;
        let report = run_experiment(&cfg).unwrap();
        assert!(report.invariant_violations.is_empty(), "{:?}", report.invariant_violations);
        match report.results {
            ExperimentResults::DmProperties(r) => {
                assert!(r.max_mean_relative_error <= 1e-9);
                assert!(r.centered_identity_exact);
                assert!(r.t_replacement_bitwise_identical);
            }
            _ => panic!("wrong results variant"),
        }
    }

    #[test]
    fn protocol_gap_schema_has_both_advantages() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::ProtocolGap);
        cfg.trials = 2;
        cfg.shadows = 2;
        cfg.universe.n = 300;
        cfg.r_ipc = 0.05;
        let report = run_experiment(&cfg).unwrap();
        match report.results {
            ExperimentResults::ProtocolGap(r) => {
                assert_eq!(r.trials.len(), 2);
                assert!(r.mean_subset_advantage > r.mean_full_universe_advantage);
                assert_eq!(r.advantage_cap_two_r_ipc, 0.1);
            }
            _ => panic!("wrong results variant"),
        }
    }

    #[test]
    fn jobs_do_not_change_results() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::EpsEstimation);
        cfg.trials = 8;
        cfg.eps.subgroup_n = 400;
        cfg.jobs = 1;
        let mut a = run_experiment(&cfg).unwrap();
        cfg.jobs = 4;
        let mut b = run_experiment(&cfg).unwrap();
        a.provenance.wall_time_secs = 0.0;
        b.provenance.wall_time_secs = 0.0;
        a.config.jobs = 0;
        b.config.jobs = 0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
