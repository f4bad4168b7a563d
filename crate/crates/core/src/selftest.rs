//! Oracle checks that need no external data: finite differences, split vs
//! monolithic training, exhaustive attack recovery, AUC pair counting, DP
//! mechanics, and the all-negative label collapse under DP on imbalanced
//! data.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attack::{
    evaluate_attack, CandidateConfiguration, ConfigurationSpace, GradientMatcher, DEFAULT_CANDIDATE_CAP,
};
use crate::data::{demo_schema, generate_synthetic, split_train_test, FeatureSchema, FeatureSpec, Side};
use crate::dp::{clip_and_noise, flip_labels, ClipMode, ClipState, DpConfig};
use crate::error::Result;
use crate::gradcheck::{run_trials, Tolerance};
use crate::metrics::auc;
use crate::nn::{Architecture, CutGradient, Parameterized};
use crate::protocol::{
    init_models, observe_gradients, train, train_monolithic, ClientView, Retain, ServerView, TrainConfig, TrainMode,
};
use crate::rng::{stream, Stream};

pub const GRADCHECK_TRIALS: usize = 100;
pub const AUC_INSTANCES: usize = 1000;
pub const AUC_TOLERANCE: f64 = 1e-12;
pub const ATTACK_ORACLE_SAMPLES: usize = 500;
pub const ATTACK_DISTANCE_TOLERANCE: f64 = 1e-9;
pub const EQUIVALENCE_EPOCHS: usize = 5;
pub const NOISE_DRAWS: usize = 100_000;
pub const NOISE_STD_TOLERANCE: f64 = 0.05;
pub const FLIP_DRAWS: usize = 100_000;
pub const FLIP_RATE_TOLERANCE: f64 = 0.005;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Analytic gradients of random small models against central differences.
pub fn gradient_fidelity(trials: usize, seed: u64) -> Result<Check> {
    let r = run_trials(trials, seed, &Tolerance::default())?;
    Ok(Check::new(
        "gradient fidelity",
        r.passed() && r.max_relative_error < 1e-4,
        format!(
            "{trials} trials, {} coordinates, {} skipped at ReLU kinks, max relative error {:.3e}{}",
            r.checked,
            r.skipped_kinks,
            r.max_relative_error,
            r.worst.map_or(String::new(), |w| format!(" at {w}"))
        ),
    ))
}

fn equivalence_config(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        architecture: Architecture {
            embed_dim: 4,
            cut_width: 8,
            server_hidden: vec![16],
            client_hidden: vec![16, 8],
        },
        batch_size: 32,
        epochs: EQUIVALENCE_EPOCHS,
        seed,
        retain: Retain::Last,
        ..TrainConfig::default()
    }
}

/// Split training through messages against a single-process model trained
/// with the same seed and batch order; parameters must match bit for bit.
pub fn split_equivalence(seed: u64) -> Result<Check> {
    let data = generate_synthetic(&demo_schema(), 600, 0.4, seed)?;
    let split = split_train_test(data.len(), 0.9, seed)?;
    let mut details = Vec::new();
    let mut passed = true;
    for mode in [TrainMode::Sl, TrainMode::Fsl] {
        let cfg = equivalence_config(mode, seed);
        let (split_run, _) = train(&data, &split, &cfg)?;
        let (server, client) = train_monolithic(&data, &split, &cfg)?;
        let bits = |m: &dyn Parameterized| -> Vec<u64> {
            m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
        };
        let a = [bits(&split_run.server), bits(&split_run.client)].concat();
        let b = [bits(&server), bits(&client)].concat();
        let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
        passed &= differing == 0;
        details.push(format!("{mode}: {differing} of {} parameters differ", a.len()));
    }
    Ok(Check::new(
        "split/monolithic equivalence",
        passed,
        format!("{} epochs; {}", EQUIVALENCE_EPOCHS, details.join(", ")),
    ))
}

fn oracle_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureSpec::categorical("s_a", 5, Side::Server),
        FeatureSpec::numeric("s_x", Side::Server),
        FeatureSpec::numeric("s_y", Side::Server),
        FeatureSpec::categorical("c_a", 4, Side::Client),
        FeatureSpec::categorical("c_b", 3, Side::Client),
        FeatureSpec::categorical("c_c", 2, Side::Client),
        FeatureSpec::label("y"),
    ])
    .expect("valid oracle schema")
}

/// EXACT on untrained random models: the true configuration must be the
/// unique nearest candidate at distance below 1e-9. Samples where another
/// candidate lies within 1e-9 of the truth are ties; they are counted and
/// excluded.
pub fn attack_oracle(samples: usize, seed: u64) -> Result<Check> {
    let schema = oracle_schema();
    let data = generate_synthetic(&schema, samples, 0.5, seed)?;
    let sv = ServerView::from_dataset(&data);
    let cv = ClientView::from_dataset(&data, None, seed);
    let ids: Vec<usize> = (0..data.len()).collect();
    let arch = Architecture {
        embed_dim: 4,
        cut_width: 16,
        server_hidden: vec![32],
        client_hidden: vec![32, 16],
    };
    let (server, client) = init_models(&schema, sv.fit_scalers(&ids), &arch, seed)?;
    let space = ConfigurationSpace::from_schema(&schema, DEFAULT_CANDIDATE_CAP)?;
    let matcher = GradientMatcher::new(&client, &space)?;
    let obs = observe_gradients(&server, &client, &sv, &cv, &ids, None)?;

    let (mut ties, mut correct, mut wrong, mut worst) = (0usize, 0usize, 0usize, 0.0f64);
    for (id, a_c, g) in &obs {
        let truth = CandidateConfiguration::from_sample(&schema, data.row(*id));
        let t = space.index_of(&truth).expect("truth is a candidate");
        let d = matcher.distances(a_c, g)?;
        let dt = d.distances[t];
        let tied = d
            .distances
            .iter()
            .enumerate()
            .any(|(i, &di)| i != t && (di - dt).abs() < ATTACK_DISTANCE_TOLERANCE);
        if tied {
            ties += 1;
            continue;
        }
        let best = d.argmin();
        worst = worst.max(d.distances[best]);
        if best == t && d.distances[best] < ATTACK_DISTANCE_TOLERANCE {
            correct += 1;
        } else {
            wrong += 1;
        }
    }
    Ok(Check::new(
        "attack oracle",
        wrong == 0 && correct > 0,
        format!(
            "|L| = {}, {samples} samples: {correct} recovered, {wrong} missed, {ties} ties excluded, max min-distance {worst:.2e}",
            space.len()
        ),
    ))
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Rank-based AUC against O(n²) pair counting on random instances drawn
/// from a coarse score grid, so ties are frequent.
pub fn auc_oracle(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = stream(seed, Stream::Sampling);
    let mut worst = 0.0f64;
    let mut tied_instances = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..200usize);
        let levels = rng.random_range(1..30u32);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied_instances += 1;
        }
        worst = worst.max((auc(&scores, &labels)? - brute_auc(&scores, &labels)).abs());
    }
    Ok(Check::new(
        "AUC oracle",
        worst <= AUC_TOLERANCE,
        format!("{instances} instances ({tied_instances} with ties), max |rank - pairs| = {worst:.2e}"),
    ))
}

/// Clipping bound, Gaussian noise scale and label-flip rate.
pub fn dp_mechanics(seed: u64) -> Result<Vec<Check>> {
    let mut rng = stream(seed, Stream::Sampling);
    let mut noise_rng = stream(seed, Stream::CutNoise);
    let dim = 16;

    // clipping without noise, fixed and adaptive
    let mut fixed = ClipState::new(ClipMode::Fixed(1.0));
    let mut adaptive = ClipState::new(ClipMode::AdaptiveMedian);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..5000 {
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let g = CutGradient::new((0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect())?;
        for state in [&mut fixed, &mut adaptive] {
            let out = clip_and_noise(&g, state, 0.0, &mut noise_rng)?;
            let c = state.clip_norm();
            let ratio = norm(out.as_slice()) / c;
            max_ratio = max_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                violations += 1;
            }
        }
    }
    let clip = Check::new(
        "DP clipping bound",
        violations == 0,
        format!("10000 clipped gradients (fixed C=1 and adaptive), max norm/C = {max_ratio:.12}"),
    );

    // noise on a zero gradient is pure N(0, (σC)²)
    let (sigma, c) = (0.5, 2.0);
    let mut state = ClipState::new(ClipMode::Fixed(c));
    let zero = CutGradient::zeros(dim);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    while n < NOISE_DRAWS {
        for &v in clip_and_noise(&zero, &mut state, sigma, &mut noise_rng)?.as_slice() {
            sum += v;
            sum_sq += v * v;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let std = (sum_sq / n as f64 - mean * mean).sqrt();
    let rel = (std / (sigma * c) - 1.0).abs();
    let noise = Check::new(
        "DP noise scale",
        rel <= NOISE_STD_TOLERANCE,
        format!(
            "{n} draws, std {std:.5} vs sigma*C = {:.5} (relative error {rel:.4})",
            sigma * c
        ),
    );

    // randomized response
    let mut flip_rng = stream(seed, Stream::LabelFlip);
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [0.1, 0.01] {
        let labels: Vec<u8> = (0..FLIP_DRAWS).map(|i| (i % 2) as u8).collect();
        let flipped = flip_labels(&labels, p, &mut flip_rng);
        let rate = labels.iter().zip(&flipped).filter(|(a, b)| a != b).count() as f64 / FLIP_DRAWS as f64;
        ok &= (rate - p).abs() <= FLIP_RATE_TOLERANCE;
        lines.push(format!("p={p}: rate {rate:.5}"));
    }
    let flip = Check::new(
        "label flip rate",
        ok,
        format!("{FLIP_DRAWS} labels each, {}", lines.join(", ")),
    );
    Ok(vec![clip, noise, flip])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Result of the imbalanced-data DP run.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalancedDpOutcome {
    pub positive_rate: f64,
    pub label_f1: f64,
    pub predicted_positive: usize,
    pub attacked: usize,
    pub unmitigated_label_f1: f64,
}

fn imbalanced_schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        FeatureSpec::categorical("s_a", 8, Side::Server),
        FeatureSpec::categorical("s_b", 5, Side::Server),
        FeatureSpec::numeric("s_x", Side::Server),
        FeatureSpec::numeric("s_y", Side::Server),
        FeatureSpec::categorical("c_a", 4, Side::Client),
        FeatureSpec::categorical("c_b", 3, Side::Client),
        FeatureSpec::label("y"),
    ])
    .expect("valid imbalanced schema")
}

/// Trains on synthetic data with 5% positives, once plain and once with
/// σ = 0.01 adaptive-clip DP, and attacks 1,000 test samples of each.
pub fn imbalanced_dp(seed: u64) -> Result<ImbalancedDpOutcome> {
    let schema = imbalanced_schema();
    let positive_rate = 0.05;
    let data = generate_synthetic(&schema, 12_000, positive_rate, seed)?;
    let split = split_train_test(data.len(), 0.9, seed)?;
    let base = TrainConfig {
        architecture: Architecture {
            embed_dim: 8,
            cut_width: 16,
            server_hidden: vec![32],
            client_hidden: vec![64, 32],
        },
        epochs: 3,
        seed,
        ..TrainConfig::default()
    };
    let space = ConfigurationSpace::from_schema(&schema, DEFAULT_CANDIDATE_CAP)?;
    let ids: Vec<usize> = split.test.iter().copied().take(1000).collect();
    let truths: Vec<CandidateConfiguration> = ids
        .iter()
        .map(|&i| CandidateConfiguration::from_sample(&schema, data.row(i)))
        .collect();
    let sv = ServerView::from_dataset(&data);
    let cv = ClientView::from_dataset(&data, None, seed);

    let attack = |cfg: &TrainConfig| -> Result<Vec<CandidateConfiguration>> {
        let (models, _) = train(&data, &split, cfg)?;
        let mut p = models.privatizer.clone();
        let obs = observe_gradients(&models.server, &models.client, &sv, &cv, &ids, p.as_mut())?;
        let matcher = GradientMatcher::new(&models.client, &space)?;
        obs.iter()
            .map(|(id, a, g)| {
                Ok(matcher
                    .attack(*id, a, g, crate::attack::AttackVariant::Exact)?
                    .predicted)
            })
            .collect()
    };
    let plain = attack(&base)?;
    let dp_cfg = TrainConfig {
        dp: Some(DpConfig::default()),
        ..base.clone()
    };
    let noised = attack(&dp_cfg)?;
    Ok(ImbalancedDpOutcome {
        positive_rate: data.positive_rate(),
        label_f1: evaluate_attack(&noised, &truths, &space)?.label.f1,
        predicted_positive: noised.iter().filter(|c| c.label == 1).count(),
        attacked: ids.len(),
        unmitigated_label_f1: evaluate_attack(&plain, &truths, &space)?.label.f1,
    })
}

pub fn imbalanced_dp_check(seed: u64) -> Result<Check> {
    let o = imbalanced_dp(seed)?;
    Ok(Check::new(
        "imbalanced DP label collapse",
        o.label_f1 == 0.0 && o.unmitigated_label_f1 == 1.0,
        format!(
            "positive rate {:.3}; under DP {} of {} labels reconstructed as 1, label F1 {:.4} (unmitigated {:.4})",
            o.positive_rate, o.predicted_positive, o.attacked, o.label_f1, o.unmitigated_label_f1
        ),
    ))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64, progress: &mut dyn FnMut(&Check)) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut push = |c: Check| {
        progress(&c);
        out.push(c);
    };
    push(gradient_fidelity(GRADCHECK_TRIALS, seed)?);
    push(split_equivalence(seed)?);
    push(attack_oracle(ATTACK_ORACLE_SAMPLES, seed)?);
    push(auc_oracle(AUC_INSTANCES, seed)?);
    for c in dp_mechanics(seed)? {
        push(c);
    }
    push(imbalanced_dp_check(seed)?);
    Ok(out)
}
