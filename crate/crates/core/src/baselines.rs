//! Comparison methods: Hwang-style adaptive splitting and leave-one-out
//! Kalman filter banks.

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;

use crate::error::{param, Result};
use crate::faults::FaultState;
use crate::kalman::{empirical_quantile, GroupTester};
use crate::lds::SensorTrace;
use crate::rng::rng_from_seed;

/// What happens after a positive group test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HwangVariant {
    /// Draw the next pool afresh from all uncertain sensors.
    #[default]
    RandomRegeneration,
    /// Binary-search the positive pool down to one defective.
    Bisection,
}

impl HwangVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" | "regenerate" => Ok(Self::RandomRegeneration),
            "bisect" | "bisection" => Ok(Self::Bisection),
            other => param(format!("unknown hwang variant '{other}'")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomRegeneration => "random",
            Self::Bisection => "bisect",
        }
    }
}

/// Bookkeeping of a Hwang run; the three sets partition `0..N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwangState {
    pub uncertain: Vec<usize>,
    pub declared_faulty: Vec<usize>,
    pub declared_normal: Vec<usize>,
    pub d_remaining: usize,
    pub tests_used: usize,
}

impl HwangState {
    fn new(n: usize, d: usize) -> Self {
        Self {
            uncertain: (0..n).collect(),
            declared_faulty: Vec::new(),
            declared_normal: Vec::new(),
            d_remaining: d,
            tests_used: 0,
        }
    }

    fn mark_normal(&mut self, sensors: &[usize]) {
        self.uncertain.retain(|i| !sensors.contains(i));
        self.declared_normal.extend_from_slice(sensors);
    }

    fn mark_faulty(&mut self, sensor: usize) {
        self.uncertain.retain(|&i| i != sensor);
        self.declared_faulty.push(sensor);
        self.d_remaining = self.d_remaining.saturating_sub(1);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwangOutcome {
    /// Flags exactly the declared-faulty sensors.
    pub state: FaultState,
    pub tests_used: usize,
    /// The budget ran out before the search finished.
    pub budget_exhausted: bool,
    pub final_state: HwangState,
}

struct Budgeted<'a> {
    test_fn: &'a mut dyn FnMut(&[usize]) -> Result<bool>,
    budget: usize,
    used: usize,
}

impl Budgeted<'_> {
    /// `None` once the budget is spent.
    fn test(&mut self, pool: &[usize]) -> Result<Option<bool>> {
        if self.used >= self.budget {
            return Ok(None);
        }
        self.used += 1;
        (self.test_fn)(pool).map(Some)
    }
}

/// Adaptive splitting with `d` assumed defectives.
///
/// While more defectives remain than half the uncertain sensors, sensors are
/// tested one at a time; otherwise a pool of `2^floor(log2(u / d_remaining))`
/// uncertain sensors is tested. A negative pool is declared normal. A
/// positive pool is either dropped (the next pool is redrawn from all
/// uncertain sensors) or bisected, depending on `variant`.
pub fn hwang_run(
    n: usize,
    d: usize,
    test_fn: &mut dyn FnMut(&[usize]) -> Result<bool>,
    seed: u64,
    budget: usize,
    variant: HwangVariant,
) -> Result<HwangOutcome> {
    if d < 1 || d > n {
        return param(format!("need 1 <= d <= N (d={d}, N={n})"));
    }
    let mut rng = rng_from_seed(seed);
    let mut st = HwangState::new(n, d);
    st.uncertain.shuffle(&mut rng);
    let mut tests = Budgeted {
        test_fn,
        budget,
        used: 0,
    };
    let mut exhausted = false;
    'outer: while st.d_remaining > 0 && !st.uncertain.is_empty() {
        let u = st.uncertain.len();
        if 2 * st.d_remaining > u {
            let i = st.uncertain[0];
            match tests.test(&[i])? {
                None => {
                    exhausted = true;
                    break;
                }
                Some(true) => st.mark_faulty(i),
                Some(false) => st.mark_normal(&[i]),
            }
            continue;
        }
        let ratio = u / st.d_remaining;
        let mut size = 1usize << ratio.ilog2();
        if size >= u && variant == HwangVariant::RandomRegeneration {
            // a positive result on every uncertain sensor would carry no
            // information, and redrawing would repeat it forever
            size = u / 2;
        }
        let pool: Vec<usize> = st
            .uncertain
            .choose_multiple(&mut rng, size)
            .copied()
            .collect();
        match tests.test(&pool)? {
            None => {
                exhausted = true;
                break;
            }
            Some(false) => st.mark_normal(&pool),
            Some(true) => {
                if variant == HwangVariant::RandomRegeneration {
                    continue;
                }
                // halve until one sensor is left; the untested half of a
                // negative split is known to hold a defective
                let mut group = pool;
                while group.len() > 1 {
                    let second = group.split_off(group.len() / 2);
                    match tests.test(&group)? {
                        None => {
                            exhausted = true;
                            break 'outer;
                        }
                        Some(true) => {}
                        Some(false) => {
                            st.mark_normal(&group);
                            group = second;
                        }
                    }
                }
                st.mark_faulty(group[0]);
            }
        }
    }
    st.tests_used = tests.used;
    st.declared_faulty.sort_unstable();
    st.declared_normal.sort_unstable();
    let state = FaultState::from_support(n, &st.declared_faulty)?;
    Ok(HwangOutcome {
        state,
        tests_used: st.tests_used,
        budget_exhausted: exhausted,
        final_state: st,
    })
}

/// Scoring rule for a leave-one-out filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LooVariant {
    /// Mean squared one-step output prediction error on the used sensors;
    /// the test excluding a faulty sensor scores lowest.
    Kobayashi,
    /// Mean squared distance from the all-sensor state estimate; the test
    /// excluding a faulty sensor scores highest.
    Da,
}

impl LooVariant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Kobayashi => "loo_kobayashi",
            Self::Da => "loo_da",
        }
    }
}

/// One score per sensor `i`, from a filter using every sensor except `i`.
pub fn loo_kalman_scores(
    tester: &GroupTester,
    trace: &SensorTrace,
    variant: LooVariant,
) -> Result<Vec<f64>> {
    let n = tester.model().num_sensors();
    if n < 3 {
        return param("leave-one-out needs N >= 3");
    }
    let burn_in = tester.config().burn_in;
    if trace.len() <= burn_in {
        return param("trace shorter than burn-in");
    }
    let reference = match variant {
        LooVariant::Da => Some(tester.predicted_states(trace, &(0..n).collect::<Vec<_>>())?),
        LooVariant::Kobayashi => None,
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let sensors: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x = tester.predicted_states(trace, &sensors)?;
            Ok(match &reference {
                Some(r) => mean_sq_state_distance(&x, r, burn_in),
                None => mean_sq_prediction_error(tester, trace, &x, &sensors, burn_in),
            })
        })
        .collect()
}

fn mean_sq_state_distance(x: &DMatrix<f64>, r: &DMatrix<f64>, burn_in: usize) -> f64 {
    let rows = x.nrows() - burn_in;
    let diff = x.rows(burn_in, rows) - r.rows(burn_in, rows);
    diff.norm_squared() / rows as f64
}

fn mean_sq_prediction_error(
    tester: &GroupTester,
    trace: &SensorTrace,
    x: &DMatrix<f64>,
    sensors: &[usize],
    burn_in: usize,
) -> f64 {
    let rows = x.nrows() - burn_in;
    let c = tester.model().c().select_rows(sensors);
    let predicted = x.rows(burn_in, rows) * c.transpose();
    let observed = trace.samples().select_columns(sensors);
    let err = observed.rows(burn_in, rows) - predicted;
    err.norm_squared() / (rows * sensors.len()) as f64
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    empirical_quantile(&mut v, 0.5)
}

/// Index of the suspected sensor and the relative gap separating it from
/// the median score.
pub fn loo_outlier(scores: &[f64], variant: LooVariant) -> (usize, f64) {
    let med = median(scores);
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if better(s, scores[best]) {
                best = i;
            }
        }
        best
    };
    match variant {
        LooVariant::Kobayashi => {
            let i = pick(|a, b| a < b);
            (i, (med - scores[i]) / med)
        }
        LooVariant::Da => {
            let i = pick(|a, b| a > b);
            (i, (scores[i] - med) / med)
        }
    }
}

fn decide(scores: &[f64], threshold: f64, variant: LooVariant) -> FaultState {
    let (i, spread) = loo_outlier(scores, variant);
    let mut flags = vec![false; scores.len()];
    if spread > threshold {
        flags[i] = true;
    }
    FaultState::from_flags(flags)
}

/// Flag the lowest-scoring test's sensor when the spread exceeds `threshold`.
pub fn kobayashi_decide(scores: &[f64], threshold: f64) -> FaultState {
    decide(scores, threshold, LooVariant::Kobayashi)
}

/// Flag the highest-scoring test's sensor when the spread exceeds `threshold`.
pub fn da_decide(scores: &[f64], threshold: f64) -> FaultState {
    decide(scores, threshold, LooVariant::Da)
}

/// Leave-one-out detector calibrated on clean traces: each test's score is
/// divided by its mean clean score, and the no-fault spread threshold is the
/// given quantile of clean spreads.
#[derive(Debug, Clone, PartialEq)]
pub struct LooDetector {
    pub variant: LooVariant,
    pub normalizers: Vec<f64>,
    pub threshold: f64,
}

impl LooDetector {
    pub fn calibrate(
        tester: &GroupTester,
        clean_traces: &[SensorTrace],
        variant: LooVariant,
        quantile: f64,
    ) -> Result<Self> {
        if clean_traces.is_empty() {
            return param("need at least one clean trace");
        }
        let raw = clean_traces
            .iter()
            .map(|t| loo_kalman_scores(tester, t, variant))
            .collect::<Result<Vec<_>>>()?;
        let n = raw[0].len();
        let normalizers: Vec<f64> = (0..n)
            .map(|i| {
                let m = raw.iter().map(|s| s[i]).sum::<f64>() / raw.len() as f64;
                m.max(f64::MIN_POSITIVE)
            })
            .collect();
        let mut spreads: Vec<f64> = raw
            .iter()
            .map(|s| loo_outlier(&normalize(s, &normalizers), variant).1)
            .collect();
        let threshold = empirical_quantile(&mut spreads, quantile);
        Ok(Self {
            variant,
            normalizers,
            threshold,
        })
    }

    /// Normalized scores for `trace`.
    pub fn scores(&self, tester: &GroupTester, trace: &SensorTrace) -> Result<Vec<f64>> {
        Ok(normalize(
            &loo_kalman_scores(tester, trace, self.variant)?,
            &self.normalizers,
        ))
    }

    pub fn decide(&self, scores: &[f64]) -> FaultState {
        decide(scores, self.threshold, self.variant)
    }

    pub fn detect(&self, tester: &GroupTester, trace: &SensorTrace) -> Result<FaultState> {
        Ok(self.decide(&self.scores(tester, trace)?))
    }
}

fn normalize(scores: &[f64], normalizers: &[f64]) -> Vec<f64> {
    scores.iter().zip(normalizers).map(|(s, m)| s / m).collect()
}
