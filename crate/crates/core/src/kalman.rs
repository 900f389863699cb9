//! Kalman filtering on sensor subsets and the subgroup-discrepancy group test.
//!
//! A pool of sensors is split into two subgroups. Each subgroup drives its
//! own filter over the same trace, and the pool is declared faulty when the
//! two predicted state sequences disagree by more than a threshold.
//!
//! The covariance recursion of a filter does not depend on the observations,
//! so it is computed once per sensor subset as a [`GainSchedule`] and reused
//! across traces. Once consecutive predicted covariances agree to
//! [`STEADY_STATE_RTOL`] the gain is frozen.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{param, Error, Result};
use crate::faults::{inject, FaultSpec, FaultState};
use crate::lds::{symmetrize, SensorTrace, StateSpaceModel};
use crate::rng::{derive_seed, rng_from_seed};

/// Relative change of the predicted covariance below which the gain is frozen.
pub const STEADY_STATE_RTOL: f64 = 1e-13;
/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;
/// Diagonal of the initial covariance used by the group test.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanState {
    /// Zero mean with covariance `variance * I`.
    pub fn uninformative(state_dim: usize, variance: f64) -> Self {
        Self {
            x_hat: DVector::zeros(state_dim),
            p: DMatrix::identity(state_dim, state_dim) * variance,
        }
    }
}

/// How `P[k|k]` is formed from `P[k|k-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// `(I - K C) P`, followed by symmetrization.
    #[default]
    Simple,
    /// `(I - K C) P (I - K C)^T + K R K^T`.
    Joseph,
}

/// One predict/update cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub predicted: KalmanState,
    pub updated: KalmanState,
}

/// Predict from `state` (an updated estimate) and then update with `y`.
pub fn kf_step(
    state: &KalmanState,
    model: &StateSpaceModel,
    y: &DVector<f64>,
    u: Option<&DVector<f64>>,
    form: CovarianceForm,
) -> Result<StepOutput> {
    let q = model.state_dim();
    if state.x_hat.len() != q || state.p.shape() != (q, q) {
        return param("filter state does not match the model's state dimension");
    }
    if y.len() != model.num_sensors() {
        return param(format!(
            "observation has {} entries, model has {} sensors",
            y.len(),
            model.num_sensors()
        ));
    }
    let a = model.a();
    let mut x_pred = a * &state.x_hat;
    if let (Some(b), Some(u)) = (model.b(), u) {
        if u.len() != b.ncols() {
            return param("input vector does not match B");
        }
        x_pred.gemv(1.0, b, u, 1.0);
    }
    let mut p_pred = a * &state.p * a.transpose() + model.process_noise_cov();
    symmetrize(&mut p_pred);

    let gain = kalman_gain(&p_pred, model.c(), model.meas_noise_cov())?;
    let innovation = y - model.c() * &x_pred;
    let x_upd = &x_pred + &gain * innovation;
    let p_upd = update_covariance(&p_pred, &gain, model.c(), model.meas_noise_cov(), form);
    Ok(StepOutput {
        predicted: KalmanState {
            x_hat: x_pred,
            p: p_pred,
        },
        updated: KalmanState {
            x_hat: x_upd,
            p: p_upd,
        },
    })
}

fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pct = p * c.transpose();
    let mut s = c * &pct + r;
    symmetrize(&mut s);
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_INNOVATION_CONDITION {
        return Err(Error::Numerical(format!(
            "innovation covariance ill-conditioned (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
    // K = P C^T S^-1  <=>  S K^T = C P^T
    Ok(chol.solve(&pct.transpose()).transpose())
}

fn update_covariance(
    p_pred: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    form: CovarianceForm,
) -> DMatrix<f64> {
    let q = p_pred.nrows();
    let i_kc = DMatrix::identity(q, q) - gain * c;
    let mut p = match form {
        CovarianceForm::Simple => &i_kc * p_pred,
        CovarianceForm::Joseph => &i_kc * p_pred * i_kc.transpose() + gain * r * gain.transpose(),
    };
    symmetrize(&mut p);
    p
}

/// Precomputed gains for one sensor subset.
///
/// `transient[k]` is the gain applied at step `k`; after the transient the
/// filter runs with the frozen steady-state gain, written as
/// `x[k+1|k] = F x[k|k-1] + G y[k]`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    transient: Vec<DMatrix<f64>>,
    steady: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl GainSchedule {
    /// Run the covariance recursion of `model` (already restricted to the
    /// subset) for at most `steps` steps.
    pub fn compute(
        model: &StateSpaceModel,
        initial_p: &DMatrix<f64>,
        steps: usize,
        form: CovarianceForm,
    ) -> Result<Self> {
        let (a, c) = (model.a(), model.c());
        let (rg, rv) = (model.process_noise_cov(), model.meas_noise_cov());
        let q = model.state_dim();
        let mut p_pred = a * initial_p * a.transpose() + rg;
        symmetrize(&mut p_pred);
        let mut transient = Vec::new();
        for _ in 0..steps {
            let gain = kalman_gain(&p_pred, c, rv)?;
            let p_upd = update_covariance(&p_pred, &gain, c, rv, form);
            let mut p_next = a * &p_upd * a.transpose() + rg;
            symmetrize(&mut p_next);
            let change = (&p_next - &p_pred).amax();
            let scale = p_pred.amax().max(f64::MIN_POSITIVE);
            if change <= STEADY_STATE_RTOL * scale {
                let f = a * (DMatrix::identity(q, q) - &gain * c);
                let g = a * &gain;
                return Ok(Self {
                    transient,
                    steady: Some((f, g)),
                });
            }
            transient.push(gain);
            p_pred = p_next;
        }
        Ok(Self {
            transient,
            steady: None,
        })
    }

    pub fn transient_len(&self) -> usize {
        self.transient.len()
    }

    pub fn is_steady(&self) -> bool {
        self.steady.is_some()
    }

    fn covers(&self, steps: usize) -> bool {
        self.steady.is_some() || self.transient.len() >= steps
    }

    /// Predicted states `x[k|k-1]` for every row of `observations`
    /// (already restricted to the subset), one row per step.
    pub fn predicted_states(
        &self,
        model: &StateSpaceModel,
        observations: &DMatrix<f64>,
        x0: &DVector<f64>,
    ) -> DMatrix<f64> {
        let steps = observations.nrows();
        let q = model.state_dim();
        let (a, c) = (model.a(), model.c());
        let mut out = DMatrix::zeros(steps, q);
        let mut x_pred = a * x0;
        let mut x_upd = DVector::zeros(q);
        let mut next = DVector::zeros(q);
        let mut innov = DVector::zeros(c.nrows());
        let mut y = DVector::zeros(c.nrows());
        for k in 0..steps {
            for (i, v) in y.iter_mut().enumerate() {
                *v = observations[(k, i)];
            }
            for i in 0..q {
                out[(k, i)] = x_pred[i];
            }
            if let Some(gain) = self.transient.get(k) {
                innov.copy_from(&y);
                innov.gemv(-1.0, c, &x_pred, 1.0);
                x_upd.copy_from(&x_pred);
                x_upd.gemv(1.0, gain, &innov, 1.0);
                next.gemv(1.0, a, &x_upd, 0.0);
            } else {
                let (f, g) = self
                    .steady
                    .as_ref()
                    .expect("schedule shorter than trace without steady state");
                next.gemv(1.0, f, &x_pred, 0.0);
                next.gemv(1.0, g, &y, 1.0);
            }
            std::mem::swap(&mut x_pred, &mut next);
        }
        out
    }
}

/// Filter `trace` using only `sensors` and return the predicted states
/// `x[k|k-1]`, one row per step. `initial` is the estimate before the first
/// sample. Inputs are not fed to the filter.
pub fn run_filter(
    model: &StateSpaceModel,
    trace: &SensorTrace,
    sensors: &[usize],
    initial: &KalmanState,
    form: CovarianceForm,
) -> Result<DMatrix<f64>> {
    check_trace(model, trace)?;
    let restricted = model.restrict_observation(sensors)?;
    let schedule = GainSchedule::compute(&restricted, &initial.p, trace.len(), form)?;
    let obs = trace.samples().select_columns(sensors);
    Ok(schedule.predicted_states(&restricted, &obs, &initial.x_hat))
}

fn check_trace(model: &StateSpaceModel, trace: &SensorTrace) -> Result<()> {
    if trace.num_sensors() != model.num_sensors() {
        return param(format!(
            "trace has {} sensors, model has {}",
            trace.num_sensors(),
            model.num_sensors()
        ));
    }
    Ok(())
}

/// Random balanced split of a pool into two disjoint subgroups.
pub fn split_pool(pool: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if pool.len() < 2 {
        return Err(Error::PoolTooSmall { size: pool.len() });
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut rng_from_seed(seed));
    let b = shuffled.split_off(pool.len() / 2);
    Ok((shuffled, b))
}

/// How per-step discrepancies are reduced to one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatisticKind {
    /// Largest infinity norm of `e[k]` after burn-in.
    #[default]
    MaxInfNorm,
    /// Mean infinity norm of `e[k]` after burn-in.
    MeanInfNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTestConfig {
    pub threshold: f64,
    /// Leading steps excluded from the statistic.
    pub burn_in: usize,
    pub statistic: StatisticKind,
    pub covariance_form: CovarianceForm,
    pub initial_variance: f64,
}

impl GroupTestConfig {
    /// Burn-in of 10% of the trace length, threshold to be calibrated.
    pub fn for_trace_len(len: usize) -> Self {
        Self {
            threshold: f64::INFINITY,
            burn_in: len / 10,
            statistic: StatisticKind::MaxInfNorm,
            covariance_form: CovarianceForm::Simple,
            initial_variance: DEFAULT_INITIAL_VARIANCE,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupTestOutcome {
    pub statistic: f64,
    pub decision: bool,
}

/// Runs group tests against one model, caching a gain schedule per subset.
///
/// Safe to share between threads.
pub struct GroupTester {
    model: StateSpaceModel,
    config: GroupTestConfig,
    cache: Mutex<HashMap<Vec<usize>, Arc<GainSchedule>>>,
}

impl GroupTester {
    pub fn new(model: StateSpaceModel, config: GroupTestConfig) -> Result<Self> {
        if !(config.threshold > 0.0) {
            return param("threshold must be positive");
        }
        if !(config.initial_variance > 0.0) {
            return param("initial variance must be positive");
        }
        Ok(Self {
            model,
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn config(&self) -> &GroupTestConfig {
        &self.config
    }

    /// Same model and cached schedules, different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        let cache = self.cache.lock().expect("gain cache poisoned").clone();
        let mut t = Self::new(
            self.model.clone(),
            self.config.clone().with_threshold(threshold),
        )?;
        t.cache = Mutex::new(cache);
        Ok(t)
    }

    fn schedule(&self, sorted: &[usize], steps: usize) -> Result<Arc<GainSchedule>> {
        if let Some(s) = self.cache.lock().expect("gain cache poisoned").get(sorted) {
            if s.covers(steps) {
                return Ok(Arc::clone(s));
            }
        }
        let restricted = self.model.restrict_observation(sorted)?;
        let q = self.model.state_dim();
        let p0 = DMatrix::identity(q, q) * self.config.initial_variance;
        let schedule = Arc::new(GainSchedule::compute(
            &restricted,
            &p0,
            steps,
            self.config.covariance_form,
        )?);
        self.cache
            .lock()
            .expect("gain cache poisoned")
            .insert(sorted.to_vec(), Arc::clone(&schedule));
        Ok(schedule)
    }

    /// Predicted states from the given sensors. The subset is sorted first,
    /// so the result does not depend on the order the sensors are listed in.
    pub fn predicted_states(&self, trace: &SensorTrace, sensors: &[usize]) -> Result<DMatrix<f64>> {
        check_trace(&self.model, trace)?;
        let mut sorted = sensors.to_vec();
        sorted.sort_unstable();
        let schedule = self.schedule(&sorted, trace.len())?;
        let restricted = self.model.restrict_observation(&sorted)?;
        let obs = trace.samples().select_columns(&sorted);
        let x0 = DVector::zeros(self.model.state_dim());
        Ok(schedule.predicted_states(&restricted, &obs, &x0))
    }

    /// Discrepancy statistic between two disjoint subgroups.
    pub fn statistic(&self, trace: &SensorTrace, a: &[usize], b: &[usize]) -> Result<f64> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::PoolTooSmall {
                size: a.len() + b.len(),
            });
        }
        if trace.len() <= self.config.burn_in {
            return param(format!(
                "burn-in {} leaves no samples of a {}-step trace",
                self.config.burn_in,
                trace.len()
            ));
        }
        let xa = self.predicted_states(trace, a)?;
        let xb = self.predicted_states(trace, b)?;
        Ok(discrepancy(
            &xa,
            &xb,
            self.config.burn_in,
            self.config.statistic,
        ))
    }

    pub fn test_split(
        &self,
        trace: &SensorTrace,
        a: &[usize],
        b: &[usize],
    ) -> Result<GroupTestOutcome> {
        let statistic = self.statistic(trace, a, b)?;
        Ok(GroupTestOutcome {
            statistic,
            decision: statistic > self.config.threshold,
        })
    }

    /// Split `pool` at random (seeded) and test it.
    pub fn test(&self, trace: &SensorTrace, pool: &[usize], seed: u64) -> Result<GroupTestOutcome> {
        let (a, b) = split_pool(pool, seed)?;
        self.test_split(trace, &a, &b)
    }
}

/// Reduce `xa - xb` over rows `burn_in..` to a scalar.
pub fn discrepancy(
    xa: &DMatrix<f64>,
    xb: &DMatrix<f64>,
    burn_in: usize,
    kind: StatisticKind,
) -> f64 {
    let steps = xa.nrows();
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for k in burn_in..steps {
        let mut norm = 0.0f64;
        for i in 0..xa.ncols() {
            norm = norm.max((xa[(k, i)] - xb[(k, i)]).abs());
        }
        max = max.max(norm);
        sum += norm;
    }
    match kind {
        StatisticKind::MaxInfNorm => max,
        StatisticKind::MeanInfNorm => sum / (steps - burn_in).max(1) as f64,
    }
}

/// One-shot group test on `pool`.
pub fn group_test(
    model: &StateSpaceModel,
    trace: &SensorTrace,
    pool: &[usize],
    config: &GroupTestConfig,
    seed: u64,
) -> Result<GroupTestOutcome> {
    GroupTester::new(model.clone(), config.clone())?.test(trace, pool, seed)
}

/// Linear-interpolated empirical quantile (`q = 1` gives the maximum).
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Fault-free statistics for `num_samples` random pools of `pool_size`,
/// cycling through `clean_traces`.
pub fn clean_statistics(
    tester: &GroupTester,
    clean_traces: &[SensorTrace],
    pool_size: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = tester.model().num_sensors();
    if clean_traces.is_empty() {
        return param("need at least one clean trace");
    }
    if pool_size < 2 || pool_size > n {
        return param(format!("pool size {pool_size} must be in 2..={n}"));
    }
    let mut rng = rng_from_seed(seed);
    let mut stats = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let pool = rand::seq::index::sample(&mut rng, n, pool_size).into_vec();
        let trace = &clean_traces[i % clean_traces.len()];
        let split_seed: u64 = rng.random();
        stats.push(tester.test(trace, &pool, split_seed)?.statistic);
    }
    Ok(stats)
}

/// Threshold at the given quantile of the fault-free statistic distribution.
pub fn calibrate_threshold(
    tester: &GroupTester,
    clean_traces: &[SensorTrace],
    pool_size: usize,
    quantile: f64,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if num_samples < 50 {
        return param("calibration needs at least 50 samples");
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return param(format!("quantile {quantile} outside (0, 1]"));
    }
    let mut stats = clean_statistics(tester, clean_traces, pool_size, num_samples, seed)?;
    let t = empirical_quantile(&mut stats, quantile);
    Ok(t.max(f64::MIN_POSITIVE))
}

/// Mean clean and single-fault statistics per pool size.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub group_size: usize,
    pub clean_statistic: f64,
    pub faulty_statistic: f64,
}

/// For each pool size, average the statistic over `repeats` random pools,
/// once on the clean trace and once with one pool member faulty.
pub fn subgroup_discrepancy_profile(
    tester: &GroupTester,
    trace: &SensorTrace,
    group_sizes: &[usize],
    fault: &FaultSpec,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ProfileRow>> {
    let n = tester.model().num_sensors();
    let mut rows = Vec::with_capacity(group_sizes.len());
    for (gi, &size) in group_sizes.iter().enumerate() {
        if size < 2 || size > n {
            return param(format!("group size {size} must be in 2..={n}"));
        }
        let mut rng = rng_from_seed(derive_seed(seed, "profile", gi as u64));
        let (mut clean, mut faulty) = (0.0, 0.0);
        for _ in 0..repeats {
            let pool = rand::seq::index::sample(&mut rng, n, size).into_vec();
            let (a, b) = split_pool(&pool, rng.random())?;
            clean += tester.statistic(trace, &a, &b)?;
            let state = FaultState::from_support(n, &[a[0]])?;
            let corrupted = inject(trace, &state, fault, rng.random())?;
            faulty += tester.statistic(&corrupted, &a, &b)?;
        }
        rows.push(ProfileRow {
            group_size: size,
            clean_statistic: clean / repeats as f64,
            faulty_statistic: faulty / repeats as f64,
        });
    }
    Ok(rows)
}
