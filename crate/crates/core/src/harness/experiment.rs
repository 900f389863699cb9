//! Prepared experiments and single Monte-Carlo trials.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{hwang_run, LooDetector, LooVariant};
use crate::bgt::{
    balance_split_kf_bgt, map_decode, random_initial_pools, threshold_decode, BeliefState,
    BgtSession, NoiseModel,
};
use crate::cgt::{
    generate_random_matrix, likelihood_decode, min_distance_decode, search_disjunct_matrix,
    MeasurementMatrix, TestResults,
};
use crate::error::{param, Error, Result};
use crate::faults::{inject, sample_fault_state_between, FaultState};
use crate::kalman::{empirical_quantile, split_pool, GroupTestConfig, GroupTester};
use crate::lds::{
    generate_random_stable_model, reduce_order, simulate, InputMode, SensorTrace, StateSpaceModel,
};
use crate::rng::{derive_seed, rng_from_seed};

use super::config::{BgtDecoder, CgtDecoder, CgtDesign, ExperimentConfig, Method, Mode};

/// Restarts allowed when searching for a disjunct design.
const DISJUNCT_RESTARTS: usize = 200;
/// Bernoulli density used for disjunct designs.
const DISJUNCT_DENSITY: f64 = 0.3;

/// Outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    /// Fraction of faulty sensors flagged; 1 when no sensor is faulty.
    pub detection_rate: f64,
    /// Fraction of normal sensors flagged.
    pub false_alarm_rate: f64,
    pub tests_used: usize,
    /// Seed of the method's random stream in this trial.
    pub seed: u64,
}

impl TrialMetrics {
    pub fn score(truth: &FaultState, detected: &FaultState, tests_used: usize, seed: u64) -> Self {
        let faulty = truth.count();
        let normal = truth.len() - faulty;
        let hits = detected
            .support()
            .iter()
            .filter(|&&i| truth.is_faulty(i))
            .count();
        let false_alarms = detected.count() - hits;
        Self {
            detection_rate: if faulty == 0 {
                1.0
            } else {
                hits as f64 / faulty as f64
            },
            false_alarm_rate: if normal == 0 {
                0.0
            } else {
                false_alarms as f64 / normal as f64
            },
            tests_used,
            seed,
        }
    }
}

/// Boolean group test: OR of the pool's true flags, then flipped with
/// probability `alpha` (all-normal pool) or `beta` (pool with a fault).
pub fn simulate_boolean_test(
    pool: &[usize],
    truth: &FaultState,
    noise: NoiseModel,
    seed: u64,
) -> Result<bool> {
    if pool.is_empty() {
        return param("test pool must be non-empty");
    }
    if let Some(&i) = pool.iter().find(|&&i| i >= truth.len()) {
        return param(format!("sensor {i} out of range"));
    }
    let ideal = pool.iter().any(|&i| truth.is_faulty(i));
    let flip = if ideal { noise.beta } else { noise.alpha };
    let mut rng = rng_from_seed(seed);
    Ok(ideal ^ (flip > 0.0 && rng.random::<f64>() < flip))
}

struct KalmanContext {
    truth_model: StateSpaceModel,
    tester: GroupTester,
    loo: Option<LooDetector>,
}

/// An experiment with its model built and thresholds calibrated, ready to
/// run trials. Trials only read shared state, so they can run in parallel.
pub struct Experiment {
    config: ExperimentConfig,
    kalman: Option<KalmanContext>,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let kalman = match config.mode {
            Mode::BooleanTests => None,
            Mode::KalmanTests => Some(prepare_kalman(&config)?),
        };
        Ok(Self { config, kalman })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Group-test threshold in use (Kalman mode only).
    pub fn threshold(&self) -> Option<f64> {
        self.kalman.as_ref().map(|k| k.tester.config().threshold)
    }

    /// Model generating the data (Kalman mode only).
    pub fn truth_model(&self) -> Option<&StateSpaceModel> {
        self.kalman.as_ref().map(|k| &k.truth_model)
    }

    /// Group tester with the filter model and calibrated threshold.
    pub fn tester(&self) -> Option<&GroupTester> {
        self.kalman.as_ref().map(|k| &k.tester)
    }

    /// The fault state of trial `index`; identical across methods.
    pub fn fault_state(&self, index: usize) -> Result<FaultState> {
        let c = &self.config;
        sample_fault_state_between(
            c.num_sensors,
            c.d_min,
            c.d_max,
            derive_seed(c.seed, "faults", index as u64),
        )
    }

    /// Simulated and fault-injected trace of trial `index` (Kalman mode).
    pub fn trial_trace(&self, index: usize, truth: &FaultState) -> Result<SensorTrace> {
        let k = self
            .kalman
            .as_ref()
            .ok_or_else(|| Error::Configuration("traces exist only in kalman_tests mode".into()))?;
        let c = &self.config;
        let (_, clean) = simulate(
            &k.truth_model,
            c.steps,
            InputMode::None,
            derive_seed(c.seed, "data", index as u64),
        )?;
        inject(
            &clean,
            truth,
            &c.fault,
            derive_seed(c.seed, "inject", index as u64),
        )
    }

    pub fn method_seed(&self, index: usize) -> u64 {
        let base = derive_seed(self.config.seed, self.config.method.name(), 0);
        derive_seed(base, "trial", index as u64)
    }

    pub fn run_trial(&self, index: usize) -> Result<TrialMetrics> {
        let truth = self.fault_state(index)?;
        let seed = self.method_seed(index);
        let c = &self.config;
        let trace = match c.mode {
            Mode::KalmanTests => Some(self.trial_trace(index, &truth)?),
            Mode::BooleanTests => None,
        };
        let mut oracle = TestOracle {
            exp: self,
            truth: &truth,
            trace: trace.as_ref(),
            seed,
            count: 0,
        };
        let (detected, used) = match c.method {
            Method::Cgt => self.run_cgt(&mut oracle, seed)?,
            Method::Bgt | Method::KfBgt => self.run_bgt(&mut oracle, seed)?,
            Method::Hwang => {
                let out = hwang_run(
                    c.num_sensors,
                    c.hwang_defectives(),
                    &mut |pool: &[usize]| oracle.test(pool, None),
                    derive_seed(seed, "hwang", 0),
                    c.tests,
                    c.hwang_variant,
                )?;
                (out.state, out.tests_used)
            }
            Method::LooKobayashi | Method::LooDa => {
                let k = self
                    .kalman
                    .as_ref()
                    .expect("loo methods run in kalman mode");
                let det = k.loo.as_ref().expect("loo detector calibrated");
                let trace = trace.as_ref().expect("kalman mode has a trace");
                (det.detect(&k.tester, trace)?, c.num_sensors)
            }
        };
        Ok(TrialMetrics::score(&truth, &detected, used, seed))
    }

    /// All trials in index order, run on the current rayon pool.
    pub fn run_all(&self) -> Vec<Result<TrialMetrics>> {
        (0..self.config.trials)
            .into_par_iter()
            .map(|i| self.run_trial(i))
            .collect()
    }

    fn run_cgt(&self, oracle: &mut TestOracle<'_>, seed: u64) -> Result<(FaultState, usize)> {
        let c = &self.config;
        let d = c.decode_sparsity();
        let matrix = design_matrix(c, d, derive_seed(seed, "matrix", 0))?;
        let z = matrix
            .pools()
            .iter()
            .map(|pool| oracle.test(pool, None))
            .collect::<Result<Vec<bool>>>()?;
        let z = TestResults { z };
        let decode_seed = derive_seed(seed, "decode", 0);
        let state = match c.cgt_decoder {
            CgtDecoder::MinDistance => min_distance_decode(&matrix, &z, d, decode_seed)?,
            CgtDecoder::Likelihood => {
                let prior = vec![c.bgt_prior_value(); c.num_sensors];
                likelihood_decode(&matrix, &z, d, c.bgt_noise()?, &prior, decode_seed)?
            }
        };
        Ok((state, matrix.num_tests()))
    }

    fn run_bgt(&self, oracle: &mut TestOracle<'_>, seed: u64) -> Result<(FaultState, usize)> {
        let c = &self.config;
        let n = c.num_sensors;
        let prior = BeliefState::uniform(n, c.bgt_prior_value())?;
        let explore = random_initial_pools(
            n,
            c.bgt_exploration_pools,
            c.bgt_exploration_density,
            derive_seed(seed, "explore", 0),
        )?;
        let noise = c.bgt_noise()?;
        let mut session = BgtSession::new(
            prior.clone(),
            noise,
            explore,
            derive_seed(seed, "greedy", 0),
        );
        for _ in 0..c.tests {
            let pool = session.next_pool()?;
            let positive = oracle.test(&pool, Some(session.belief()))?;
            session.observe(pool, positive)?;
            if c.bgt_stop_on_convergence && session.last_change() < c.bgt_epsilon {
                break;
            }
        }
        let state = match c.bgt_decoder {
            BgtDecoder::Threshold => threshold_decode(session.belief(), c.bgt_sigma),
            BgtDecoder::Map => map_decode(
                session.records(),
                &prior,
                noise,
                c.d_max,
                derive_seed(seed, "decode", 0),
            )?,
        };
        Ok((state, session.tests_used()))
    }
}

/// Produces group-test results for one trial.
struct TestOracle<'a> {
    exp: &'a Experiment,
    truth: &'a FaultState,
    trace: Option<&'a SensorTrace>,
    seed: u64,
    count: u64,
}

impl TestOracle<'_> {
    fn test(&mut self, pool: &[usize], belief: Option<&BeliefState>) -> Result<bool> {
        let k = self.count;
        self.count += 1;
        let test_seed = derive_seed(self.seed, "test", k);
        let c = &self.exp.config;
        let (Some(ctx), Some(trace)) = (self.exp.kalman.as_ref(), self.trace) else {
            return simulate_boolean_test(pool, self.truth, c.noise, test_seed);
        };
        let (a, b) = kalman_split(c, pool, belief, test_seed)?;
        Ok(ctx.tester.test_split(trace, &a, &b)?.decision)
    }
}

/// Subgroups compared for `pool` under the configured method.
fn kalman_split(
    c: &ExperimentConfig,
    pool: &[usize],
    belief: Option<&BeliefState>,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if c.method == Method::KfBgt {
        let belief = belief.ok_or_else(|| Error::Configuration("kf_bgt needs a belief".into()))?;
        let s = balance_split_kf_bgt(pool, belief, c.bgt_min_subgroup)?;
        return Ok((s.a, s.b));
    }
    if pool.len() >= 2 {
        return split_pool(pool, seed);
    }
    // a lone sensor is compared against one partner from outside the pool:
    // the most trusted one when beliefs exist, otherwise a random one
    let only = pool[0];
    let partner = match belief {
        Some(b) => (0..c.num_sensors)
            .filter(|&i| i != only)
            .max_by(|&i, &j| b.get(i).total_cmp(&b.get(j)).then(j.cmp(&i)))
            .ok_or(Error::PoolTooSmall { size: 1 })?,
        None => {
            let others: Vec<usize> = (0..c.num_sensors).filter(|&i| i != only).collect();
            *others
                .choose(&mut rng_from_seed(seed))
                .ok_or(Error::PoolTooSmall { size: 1 })?
        }
    };
    Ok((vec![only], vec![partner]))
}

fn design_matrix(c: &ExperimentConfig, d: usize, seed: u64) -> Result<MeasurementMatrix> {
    match c.cgt_design {
        CgtDesign::Bernoulli => generate_random_matrix(c.tests, c.num_sensors, c.cgt_density, seed),
        CgtDesign::Disjunct => search_disjunct_matrix(
            c.tests,
            c.num_sensors,
            d.max(1),
            DISJUNCT_DENSITY,
            seed,
            DISJUNCT_RESTARTS,
        ),
    }
}

fn load_truth_model(c: &ExperimentConfig) -> Result<StateSpaceModel> {
    let model = match &c.model_file {
        Some(path) => StateSpaceModel::load(path)?,
        None => generate_random_stable_model(&c.model, derive_seed(c.seed, "model", 0))?,
    };
    if model.num_sensors() != c.num_sensors {
        return Err(Error::Configuration(format!(
            "model has {} sensors, config has {}",
            model.num_sensors(),
            c.num_sensors
        )));
    }
    Ok(model)
}

/// Clean traces used for calibration; independent of trial data.
pub fn calibration_traces(
    c: &ExperimentConfig,
    model: &StateSpaceModel,
) -> Result<Vec<SensorTrace>> {
    (0..c.calibration_traces)
        .map(|i| {
            simulate(
                model,
                c.steps,
                InputMode::None,
                derive_seed(c.seed, "calibration", i as u64),
            )
            .map(|(_, y)| y)
        })
        .collect()
}

/// Clean-data statistics for subgroup pairs drawn the way `c.method` draws
/// them: a Bernoulli pool split at random, or for KF-BGT an even split
/// padded to `min_subgroup` with random outside sensors.
pub fn calibration_statistics(
    c: &ExperimentConfig,
    tester: &GroupTester,
    traces: &[SensorTrace],
) -> Result<Vec<f64>> {
    let n = c.num_sensors;
    let density = if c.method == Method::Cgt {
        c.cgt_density
    } else {
        0.5
    };
    let mut rng = rng_from_seed(derive_seed(c.seed, "calibration-pools", 0));
    let mut out = Vec::with_capacity(c.calibration_samples);
    for s in 0..c.calibration_samples {
        let pool = loop {
            let p: Vec<usize> = (0..n).filter(|_| rng.random_bool(density)).collect();
            if p.len() >= 2 {
                break p;
            }
        };
        let (mut a, mut b) = split_pool(&pool, rng.random())?;
        if c.method == Method::KfBgt {
            let mut outside: Vec<usize> = (0..n).filter(|i| !pool.contains(i)).collect();
            outside.shuffle(&mut rng);
            let mut next = outside.into_iter();
            for g in [&mut a, &mut b] {
                while g.len() < c.bgt_min_subgroup {
                    match next.next() {
                        Some(i) => g.push(i),
                        None => break,
                    }
                }
            }
        }
        out.push(tester.statistic(&traces[s % traces.len()], &a, &b)?);
    }
    Ok(out)
}

fn prepare_kalman(c: &ExperimentConfig) -> Result<KalmanContext> {
    let truth_model = load_truth_model(c)?;
    let filter_model = match c.filter_order {
        Some(order) if order < truth_model.state_dim() => reduce_order(&truth_model, order)?,
        _ => truth_model.clone(),
    };
    let mut gt = GroupTestConfig::for_trace_len(c.steps);
    gt.statistic = c.statistic;
    let mut tester = GroupTester::new(filter_model, gt)?;
    let needs_clean = c.threshold.is_none() || c.method.is_loo();
    let traces = if needs_clean {
        calibration_traces(c, &truth_model)?
    } else {
        Vec::new()
    };
    let threshold = match c.threshold {
        Some(t) => t,
        None => {
            let mut stats = calibration_statistics(c, &tester, &traces)?;
            empirical_quantile(&mut stats, c.quantile).max(f64::MIN_POSITIVE)
        }
    };
    tester = tester.with_threshold(threshold)?;
    let loo = match c.method {
        Method::LooKobayashi => Some(LooDetector::calibrate(
            &tester,
            &traces,
            LooVariant::Kobayashi,
            c.loo_quantile,
        )?),
        Method::LooDa => Some(LooDetector::calibrate(
            &tester,
            &traces,
            LooVariant::Da,
            c.loo_quantile,
        )?),
        _ => None,
    };
    Ok(KalmanContext {
        truth_model,
        tester,
        loo,
    })
}
