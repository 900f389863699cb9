//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (run with `--nocapture` to see them) and then asserts.

use std::sync::OnceLock;
use std::time::Instant;

use faultgt::bgt::{
    bayes_update, predictive_variance, predictive_variance_expanded, target_omega, BeliefState,
    NoiseModel, TestRecord,
};
use faultgt::cgt::{boolean_apply, is_d_disjunct, min_distance_decode, search_disjunct_matrix};
use faultgt::faults::{inject, FaultSpec, FaultState};
use faultgt::harness::{compare_methods, run_config, run_sweep, ExperimentConfig, SweepAxis};
use faultgt::kalman::{calibrate_threshold, GroupTestConfig, GroupTester};
use faultgt::lds::{generate_random_stable_model, simulate, InputMode, ModelParams};
use faultgt::rng::{derive_seed, rng_from_seed};
use itertools::Itertools;
use rand::Rng;

const ORACLE_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const SATURATION: f64 = 0.99;
const NOISY_MARGIN: f64 = 0.15;
const POWER_MIN: f64 = 0.90;
const POWER_MAX_FP: f64 = 0.05;
const NOISE_GAP: f64 = 0.30;
const MULTI_MARGIN: f64 = 0.20;
const MULTI_MAX_FA: f64 = 0.05;
const PRIOR_BUDGET: usize = 100;

fn report(name: &str, pass: bool, detail: impl std::fmt::Display, start: Instant) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "[acceptance] {verdict} {name}: {detail} ({:.1?})",
        start.elapsed()
    );
    pass
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_text(text).unwrap()
}

const BOOLEAN_BASE: &str = "mode = boolean_tests
sensors = 1000
faults.count = 4
trials = 100
seed = 7
hwang.variant = bisect
";

const KALMAN_BASE: &str = "mode = kalman_tests
method = cgt
sensors = 18
faults.d_min = 1
faults.d_max = 2
trials = 100
seed = 11
";

/// Marginals of the joint posterior over all 2^n states, starting from the
/// product prior `p` and conditioning on one test.
fn joint_marginals(p: &[f64], pool: &[usize], positive: bool, noise: NoiseModel) -> Vec<f64> {
    let n = p.len();
    let mask: usize = pool.iter().map(|&i| 1usize << i).sum();
    let mut normal = vec![0.0; n];
    let mut total = 0.0;
    for s in 0..1usize << n {
        let prior: f64 = (0..n)
            .map(|i| if s >> i & 1 == 1 { 1.0 - p[i] } else { p[i] })
            .product();
        let any_faulty = s & mask != 0;
        let lik = match (any_faulty, positive) {
            (false, false) => 1.0 - noise.alpha,
            (false, true) => noise.alpha,
            (true, false) => noise.beta,
            (true, true) => 1.0 - noise.beta,
        };
        let m = prior * lik;
        total += m;
        for (i, v) in normal.iter_mut().enumerate() {
            if s >> i & 1 == 0 {
                *v += m;
            }
        }
    }
    normal.iter().map(|v| v / total).collect()
}

#[test]
fn bayes_update_matches_joint_enumeration() {
    let start = Instant::now();
    let noise = NoiseModel::symmetric(0.1).unwrap();
    let mut worst = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(2024, "oracle", instance));
        let mut belief =
            BeliefState::from_probabilities((0..10).map(|_| rng.random_range(0.3..1.0)).collect())
                .unwrap();
        for _ in 0..20 {
            let pool: Vec<usize> = loop {
                let pool: Vec<usize> = (0..10).filter(|_| rng.random_bool(0.35)).collect();
                if !pool.is_empty() {
                    break pool;
                }
            };
            let positive = rng.random_bool(0.5);
            let expected = joint_marginals(belief.probabilities(), &pool, positive, noise);
            belief =
                bayes_update(&belief, &TestRecord::new(pool, positive).unwrap(), noise).unwrap();
            for (a, b) in belief.probabilities().iter().zip(&expected) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst < ORACLE_TOL && start.elapsed().as_secs_f64() < 10.0;
    assert!(report(
        "bayes oracle",
        pass,
        format!("max |err| = {worst:.2e}"),
        start
    ));
}

#[test]
fn disjunct_design_recovers_every_sparse_state() {
    let start = Instant::now();
    let matrix = search_disjunct_matrix(16, 18, 2, 0.3, 5, 500).unwrap();
    assert!(is_d_disjunct(&matrix, 2).unwrap());
    let mut states: Vec<FaultState> = vec![FaultState::healthy(18)];
    for k in 1..=2 {
        for support in (0..18).combinations(k) {
            states.push(FaultState::from_support(18, &support).unwrap());
        }
    }
    assert_eq!(states.len(), 172);
    let exact = states
        .iter()
        .filter(|s| {
            let z = boolean_apply(&matrix, s).unwrap();
            &min_distance_decode(&matrix, &z, 2, 0).unwrap() == *s
        })
        .count();
    let pass = exact == 172 && start.elapsed().as_secs_f64() < 60.0;
    assert!(report(
        "cgt exact recovery",
        pass,
        format!("{exact}/172 states"),
        start
    ));
}

/// Smallest noiseless BGT budget reaching the saturation detection rate,
/// shared by the noiseless and noisy comparisons.
fn bgt_saturation_budget() -> Option<(usize, f64)> {
    static BUDGET: OnceLock<Option<(usize, f64)>> = OnceLock::new();
    *BUDGET.get_or_init(|| {
        let base = cfg(&format!("{BOOLEAN_BASE}method = bgt\n"));
        search_saturation(&base)
    })
}

fn search_saturation(base: &ExperimentConfig) -> Option<(usize, f64)> {
    (30..=150).find_map(|t| {
        let mut c = base.clone();
        c.set("tests", &t.to_string()).unwrap();
        let a = run_config(&c, "tests", &t.to_string()).unwrap().aggregate;
        assert_eq!(a.failures, 0);
        (a.detection_rate >= SATURATION).then_some((t, a.detection_rate))
    })
}

#[test]
fn noiseless_hwang_saturates_with_fewer_tests_than_bgt() {
    let start = Instant::now();
    let hwang = run_config(
        &cfg(&format!("{BOOLEAN_BASE}method = hwang\ntests = 1000\n")),
        "none",
        "-",
    )
    .unwrap()
    .aggregate;
    let bgt = bgt_saturation_budget();
    let pass = match bgt {
        Some((t, _)) => hwang.detection_rate >= SATURATION && hwang.tests_used_mean < t as f64,
        None => false,
    };
    let detail = format!(
        "hwang det {:.4} with {:.2} mean tests; bgt saturation budget {:?}",
        hwang.detection_rate, hwang.tests_used_mean, bgt
    );
    assert!(report("noiseless hwang vs bgt", pass, detail, start));
}

#[test]
fn noisy_bgt_beats_hwang_at_equal_budget() {
    let start = Instant::now();
    let (saturation, _) = bgt_saturation_budget().unwrap();
    let budget = (saturation as f64 * 1.5).round() as usize;
    let base = cfg(&format!(
        "{BOOLEAN_BASE}noise.alpha = 0.05\nnoise.beta = 0.05\nbgt.alpha = 0.05\nbgt.beta = 0.05\ntests = {budget}\n"
    ));
    let configs: Vec<ExperimentConfig> = ["bgt", "hwang"]
        .iter()
        .map(|m| {
            let mut c = base.clone();
            c.set("method", m).unwrap();
            c
        })
        .collect();
    let table = compare_methods(&configs).unwrap();
    let bgt = table.find("bgt", "bgt").unwrap();
    let hwang = table.find("hwang", "hwang").unwrap();
    let gap = bgt.detection_rate - hwang.detection_rate;
    let pass = gap >= NOISY_MARGIN && bgt.failures == 0 && hwang.failures == 0;
    let detail = format!(
        "budget {budget}: bgt {:.4} vs hwang {:.4} (gap {gap:.4})",
        bgt.detection_rate, hwang.detection_rate
    );
    assert!(report("noisy bgt vs hwang", pass, detail, start));
}

#[test]
fn single_kalman_group_tests_detect_spikes() {
    let start = Instant::now();
    let (n, steps, pool_size, pools) = (18, 2000, 9, 500);
    let model = generate_random_stable_model(&ModelParams::new(20, n), 31).unwrap();
    let clean: Vec<_> = (0..20)
        .map(|i| {
            simulate(&model, steps, InputMode::None, derive_seed(31, "clean", i))
                .unwrap()
                .1
        })
        .collect();
    let tester = GroupTester::new(model.clone(), GroupTestConfig::for_trace_len(steps)).unwrap();
    let threshold = calibrate_threshold(&tester, &clean, pool_size, 0.99, 500, 32).unwrap();
    let tester = tester.with_threshold(threshold).unwrap();
    let spike = FaultSpec::default_spike();
    let mut rng = rng_from_seed(33);
    let (mut detected, mut false_pos) = (0, 0);
    for i in 0..pools as u64 {
        let trace = simulate(&model, steps, InputMode::None, derive_seed(33, "trace", i))
            .unwrap()
            .1;
        let pool = rand::seq::index::sample(&mut rng, n, pool_size).into_vec();
        let faulty = FaultState::from_support(n, &[pool[rng.random_range(0..pool_size)]]).unwrap();
        let bad = inject(&trace, &faulty, &spike, derive_seed(33, "inject", i)).unwrap();
        detected += tester.test(&bad, &pool, rng.random()).unwrap().decision as usize;
        false_pos += tester.test(&trace, &pool, rng.random()).unwrap().decision as usize;
    }
    let det = detected as f64 / pools as f64;
    let fp = false_pos as f64 / pools as f64;
    let pass = det >= POWER_MIN && fp <= POWER_MAX_FP;
    assert!(report(
        "kalman test power",
        pass,
        format!("detection {det:.3}, false positive {fp:.3}"),
        start
    ));
}

#[test]
fn excessive_noise_is_much_harder_than_spikes() {
    let start = Instant::now();
    let run = |kind: &str| {
        run_config(
            &cfg(&format!("{KALMAN_BASE}tests = 12\nfaults.kind = {kind}\n")),
            "kind",
            kind,
        )
        .unwrap()
        .aggregate
    };
    let spike = run("spike");
    let noise = run("excessive_noise");
    let gap = spike.detection_rate - noise.detection_rate;
    let pass = gap >= NOISE_GAP && spike.failures == 0 && noise.failures == 0;
    let detail = format!(
        "spike {:.4} vs excessive noise {:.4} (gap {gap:.4})",
        spike.detection_rate, noise.detection_rate
    );
    assert!(report("excessive noise gap", pass, detail, start));
}

#[test]
fn cgt_beats_leave_one_out_with_two_faults() {
    let start = Instant::now();
    let base = cfg(&format!("{KALMAN_BASE}faults.count = 2\ntests = 16\n"));
    let configs: Vec<ExperimentConfig> = ["cgt", "loo_kobayashi", "loo_da"]
        .iter()
        .map(|m| {
            let mut c = base.clone();
            c.set("method", m).unwrap();
            c
        })
        .collect();
    let table = compare_methods(&configs).unwrap();
    let cgt = table.find("cgt", "cgt").unwrap();
    let kob = table.find("loo_kobayashi", "loo_kobayashi").unwrap();
    let da = table.find("loo_da", "loo_da").unwrap();
    let fa_ok = [cgt, kob, da]
        .iter()
        .all(|a| a.false_alarm_rate <= MULTI_MAX_FA && a.failures == 0);
    let pass = fa_ok
        && cgt.detection_rate - kob.detection_rate >= MULTI_MARGIN
        && cgt.detection_rate - da.detection_rate >= MULTI_MARGIN;
    let detail = format!(
        "cgt {:.4}/{:.4}, kobayashi {:.4}/{:.4}, da {:.4}/{:.4} (detection/false alarm)",
        cgt.detection_rate,
        cgt.false_alarm_rate,
        kob.detection_rate,
        kob.false_alarm_rate,
        da.detection_rate,
        da.false_alarm_rate
    );
    assert!(report("multi-fault cgt vs loo", pass, detail, start));
}

#[test]
fn target_omega_and_variance_identity() {
    let start = Instant::now();
    let mut rng = rng_from_seed(8);
    let mut failures = 0;
    for _ in 0..1000 {
        let noise =
            NoiseModel::new(rng.random_range(0.0..0.49), rng.random_range(0.0..0.49)).unwrap();
        let omega: f64 = rng.random_range(0.0..=1.0);
        let identity =
            (predictive_variance(omega, noise) - predictive_variance_expanded(omega, noise)).abs();
        // the outcome is Bernoulli, so its variance peaks at 1/4
        let best = predictive_variance(target_omega(noise), noise);
        let maximal = (best - 0.25).abs() < IDENTITY_TOL
            && (0..=100)
                .all(|k| predictive_variance(k as f64 / 100.0, noise) <= best + IDENTITY_TOL)
            && predictive_variance(omega, noise) <= best + IDENTITY_TOL;
        if identity >= IDENTITY_TOL || !maximal {
            failures += 1;
        }
    }
    let pass = failures == 0 && start.elapsed().as_secs_f64() < 1.0;
    assert!(report(
        "omega maximality and variance identity",
        pass,
        format!("{failures} failures / 1000"),
        start
    ));
}

#[test]
fn exploration_shrinks_prior_sensitivity() {
    let start = Instant::now();
    let priors = ["0.3", "0.5", "0.7", "0.9", "0.996"];
    let mut spreads = Vec::new();
    for exploration in [0, 25, 50] {
        let base = cfg(&format!(
            "{BOOLEAN_BASE}method = bgt\ntests = {PRIOR_BUDGET}\nbgt.exploration_pools = {exploration}\n"
        ));
        let table = run_sweep(&base, SweepAxis::Prior, &priors.map(String::from)).unwrap();
        let rates: Vec<f64> = table
            .rows
            .iter()
            .map(|r| r.aggregate.detection_rate)
            .collect();
        let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        spreads.push(max - min);
    }
    let pass = spreads.windows(2).all(|w| w[1] < w[0]);
    let detail = format!("spread at exploration 0/25/50: {spreads:.4?} (budget {PRIOR_BUDGET})");
    assert!(report("prior robustness", pass, detail, start));
}

#[test]
fn kf_bgt_degrades_less_than_bgt_under_model_reduction() {
    let start = Instant::now();
    let mut drops = Vec::new();
    let mut detail = String::new();
    for method in ["bgt", "kf_bgt"] {
        let base = cfg(&format!(
            "{KALMAN_BASE}method = {method}\ntests = 10\nbgt.alpha = 0.01\nbgt.beta = 0.01\n"
        ));
        let table = run_sweep(&base, SweepAxis::ModelOrder, &["auto".into(), "11".into()]).unwrap();
        assert!(table.rows.iter().all(|r| r.aggregate.failures == 0));
        let full = table.rows[0].aggregate.detection_rate;
        let reduced = table.rows[1].aggregate.detection_rate;
        drops.push(full - reduced);
        detail.push_str(&format!("{method} {full:.4} -> {reduced:.4}; "));
    }
    let pass = drops[0] > drops[1];
    assert!(report(
        "kf-bgt robustness",
        pass,
        detail.trim_end_matches("; "),
        start
    ));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let start = Instant::now();
    let boolean = cfg(&format!(
        "{BOOLEAN_BASE}method = bgt\ntrials = 20\nnoise.alpha = 0.05\nnoise.beta = 0.05\n"
    ));
    let kalman = cfg(&format!("{KALMAN_BASE}trials = 10\ntests = 8\n"));
    let csv = || {
        let mut t = run_sweep(&boolean, SweepAxis::NumTests, &["40".into(), "80".into()]).unwrap();
        t.extend(run_sweep(&kalman, SweepAxis::Threshold, &["auto".into()]).unwrap());
        t.to_csv()
    };
    let first = csv();
    let second = csv();
    let pass = first == second;
    assert!(report(
        "determinism",
        pass,
        format!("{} csv bytes", first.len()),
        start
    ));
}
