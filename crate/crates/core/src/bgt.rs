//! Adaptive Bayesian group testing.
//!
//! Each sensor carries a marginal probability of being normal. Pools are
//! grown greedily so that the probability of an all-normal pool lands near
//! the value maximizing the variance of the next test outcome, and beliefs
//! are updated in `O(N)` per test.

use std::collections::VecDeque;

use rand::Rng;

use crate::cgt::{map_decode_pools, DEFAULT_ENUMERATION_CAP};
use crate::error::{param, Error, Result};
use crate::faults::FaultState;
use crate::rng::{derive_seed, rng_from_seed};

/// Default faulty-declaration threshold for [`threshold_decode`].
pub const DEFAULT_SIGMA: f64 = 0.2;
/// Default convergence tolerance for [`has_converged`].
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default minimum subgroup size for [`balance_split_kf_bgt`].
pub const DEFAULT_MIN_SUBGROUP: usize = 3;

const CLAMP_TOL: f64 = 1e-12;

/// Test error rates: `alpha = P(Z=1 | pool all normal)`,
/// `beta = P(Z=0 | pool has a fault)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub alpha: f64,
    pub beta: f64,
}

impl NoiseModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = |v: f64| (0.0..1.0).contains(&v);
        if !ok(alpha) || !ok(beta) {
            return param(format!(
                "error rates must lie in [0, 1): alpha={alpha}, beta={beta}"
            ));
        }
        if alpha + beta >= 1.0 {
            return param(format!(
                "uninformative tests: alpha + beta = {}",
                alpha + beta
            ));
        }
        Ok(Self { alpha, beta })
    }

    pub fn noiseless() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn symmetric(rate: f64) -> Result<Self> {
        Self::new(rate, rate)
    }

    /// `P(Z=0)` for a pool that is all-normal with probability `omega`.
    pub fn prob_negative(&self, omega: f64) -> f64 {
        (1.0 - self.alpha) * omega + self.beta * (1.0 - omega)
    }
}

/// Marginal probabilities that each sensor is normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    p: Vec<f64>,
}

impl BeliefState {
    pub fn uniform(n: usize, p_normal: f64) -> Result<Self> {
        Self::from_probabilities(vec![p_normal; n])
    }

    /// Prior `1 - d_max / N` for every sensor.
    pub fn default_prior(n: usize, d_max: usize) -> Result<Self> {
        if n == 0 || d_max > n {
            return param("need N >= 1 and d_max <= N");
        }
        Self::uniform(n, 1.0 - d_max as f64 / n as f64)
    }

    pub fn from_probabilities(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return param("belief must cover at least one sensor");
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return param(format!("probability {v} outside [0, 1]"));
        }
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }
}

/// One completed test: the pool `Φ_k` and its result `Z_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestRecord {
    pub pool: Vec<usize>,
    pub positive: bool,
}

impl TestRecord {
    pub fn new(pool: Vec<usize>, positive: bool) -> Result<Self> {
        if pool.is_empty() {
            return param("test pool must be non-empty");
        }
        Ok(Self { pool, positive })
    }
}

fn check_pool(pool: &[usize], n: usize) -> Result<()> {
    if pool.is_empty() {
        return param("test pool must be non-empty");
    }
    if let Some(&i) = pool.iter().find(|&&i| i >= n) {
        return param(format!("sensor {i} out of range for N={n}"));
    }
    Ok(())
}

/// `Ω = Π_{i ∈ pool} p_i`.
pub fn pool_probability_normal(belief: &BeliefState, pool: &[usize]) -> Result<f64> {
    check_pool(pool, belief.len())?;
    Ok(pool.iter().map(|&i| belief.p[i]).product())
}

/// Variance of the next test outcome, `P(Z=0) (1 - P(Z=0))`.
pub fn predictive_variance(omega: f64, noise: NoiseModel) -> f64 {
    let p0 = noise.prob_negative(omega);
    p0 * (1.0 - p0)
}

/// The same variance written as a polynomial in `Ω`.
pub fn predictive_variance_expanded(omega: f64, noise: NoiseModel) -> f64 {
    let (a, b) = (noise.alpha, noise.beta);
    let k = 1.0 - a - b;
    b - b * b + (1.0 - 2.0 * b) * k * omega - k * k * omega * omega
}

/// Pool normal-probability maximizing [`predictive_variance`].
pub fn target_omega(noise: NoiseModel) -> f64 {
    let v = (1.0 - 2.0 * noise.beta) / (2.0 * (1.0 - noise.alpha - noise.beta));
    v.clamp(0.0, 1.0)
}

/// Greedy pool construction: start from a seeded random sensor, then add the
/// sensor bringing `Ω` closest to [`target_omega`] while that strictly helps.
pub fn greedy_design_pool(
    belief: &BeliefState,
    noise: NoiseModel,
    seed: u64,
) -> Result<Vec<usize>> {
    greedy_design_pool_traced(belief, noise, seed).map(|(pool, _)| pool)
}

/// As [`greedy_design_pool`], also returning `Ω` after each accepted add.
pub fn greedy_design_pool_traced(
    belief: &BeliefState,
    noise: NoiseModel,
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = belief.len();
    if n < 2 {
        return param("greedy pool design needs N >= 2");
    }
    let target = target_omega(noise);
    let mut rng = rng_from_seed(seed);
    let start = rng.random_range(0..n);
    let mut in_pool = vec![false; n];
    in_pool[start] = true;
    let mut pool = vec![start];
    let mut omega = belief.p[start];
    let mut trace = vec![omega];
    loop {
        let current = (omega - target).abs();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if in_pool[j] {
                continue;
            }
            let dist = (omega * belief.p[j] - target).abs();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((j, dist));
            }
        }
        match best {
            Some((j, dist)) if dist < current => {
                in_pool[j] = true;
                pool.push(j);
                omega *= belief.p[j];
                trace.push(omega);
            }
            _ => break,
        }
    }
    Ok((pool, trace))
}

/// Posterior marginals after one test. Entries outside the pool are copied.
pub fn bayes_update(
    belief: &BeliefState,
    record: &TestRecord,
    noise: NoiseModel,
) -> Result<BeliefState> {
    check_pool(&record.pool, belief.len())?;
    let omega = pool_probability_normal(belief, &record.pool)?;
    // likelihood of the observed result when the pool contains a fault
    let (delta, faulty_lik) = if record.positive {
        (
            (1.0 - noise.beta) * (1.0 - omega) + noise.alpha * omega,
            1.0 - noise.beta,
        )
    } else {
        (
            noise.beta * (1.0 - omega) + (1.0 - noise.alpha) * omega,
            noise.beta,
        )
    };
    if !(delta > 0.0) {
        return Err(Error::Numerical(format!(
            "test result has zero probability under the current belief (pool {:?}, positive={})",
            record.pool, record.positive
        )));
    }
    let mut p = belief.p.clone();
    let mut seen = vec![false; belief.len()];
    for &i in &record.pool {
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        let v = 1.0 - (1.0 - belief.p[i]) * faulty_lik / delta;
        if !(-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&v) {
            return Err(Error::Numerical(format!(
                "updated probability {v} for sensor {i}"
            )));
        }
        p[i] = v.clamp(0.0, 1.0);
    }
    Ok(BeliefState { p })
}

/// Flag sensor `i` iff `p_i < sigma`.
pub fn threshold_decode(belief: &BeliefState, sigma: f64) -> FaultState {
    FaultState::from_flags(belief.p.iter().map(|&v| v < sigma).collect())
}

/// MAP fault state over supports `<= d`, using all records and the prior.
pub fn map_decode(
    records: &[TestRecord],
    prior: &BeliefState,
    noise: NoiseModel,
    d: usize,
    seed: u64,
) -> Result<FaultState> {
    let pools: Vec<&[usize]> = records.iter().map(|r| r.pool.as_slice()).collect();
    let results: Vec<bool> = records.iter().map(|r| r.positive).collect();
    map_decode_pools(
        prior.len(),
        &pools,
        &results,
        noise,
        &prior.p,
        d,
        seed,
        DEFAULT_ENUMERATION_CAP,
    )
}

/// `count` pools with i.i.d. Bernoulli(`density`) membership, each of size >= 2.
pub fn random_initial_pools(
    n: usize,
    count: usize,
    density: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return param("random pools need N >= 2");
    }
    if !(density > 0.0 && density <= 1.0) {
        return param(format!("density {density} outside (0, 1]"));
    }
    let mut rng = rng_from_seed(seed);
    let mut pools = Vec::with_capacity(count);
    while pools.len() < count {
        let pool: Vec<usize> = (0..n).filter(|_| rng.random_bool(density)).collect();
        if pool.len() >= 2 {
            pools.push(pool);
        }
    }
    Ok(pools)
}

/// True iff no marginal moved by `epsilon` or more.
pub fn has_converged(prev: &BeliefState, next: &BeliefState, epsilon: f64) -> bool {
    prev.len() == next.len()
        && prev
            .p
            .iter()
            .zip(&next.p)
            .all(|(a, b)| (a - b).abs() < epsilon)
}

/// Subgroups used for state estimation in KF-BGT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EstimationSplit {
    /// First subgroup, including any padding.
    pub a: Vec<usize>,
    /// Second subgroup, including any padding.
    pub b: Vec<usize>,
    /// Sensors added from outside the pool.
    pub padding: Vec<usize>,
}

/// Split a pool into two halves of near-equal size, dealing sensors in order
/// of increasing belief so suspected faults land on both sides, then pad any
/// half smaller than `min_subgroup` with the most trusted outside sensors.
/// A single-sensor pool is compared against a subgroup made only of padding.
pub fn balance_split_kf_bgt(
    pool: &[usize],
    belief: &BeliefState,
    min_subgroup: usize,
) -> Result<EstimationSplit> {
    let n = belief.len();
    check_pool(pool, n)?;
    if pool.len() < 2 && min_subgroup == 0 {
        return Err(Error::PoolTooSmall { size: pool.len() });
    }
    let mut order = pool.to_vec();
    order.sort_by(|&i, &j| belief.p[i].total_cmp(&belief.p[j]).then(i.cmp(&j)));
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k % 2 == 0 {
            a.push(i);
        } else {
            b.push(i);
        }
    }
    let mut in_pool = vec![false; n];
    for &i in pool {
        in_pool[i] = true;
    }
    let mut outside: Vec<usize> = (0..n).filter(|&i| !in_pool[i]).collect();
    outside.sort_by(|&i, &j| belief.p[j].total_cmp(&belief.p[i]).then(i.cmp(&j)));
    let needed = min_subgroup.saturating_sub(a.len()) + min_subgroup.saturating_sub(b.len());
    if needed > outside.len() {
        return Err(Error::Configuration(format!(
            "cannot pad subgroups to {min_subgroup}: need {needed} outside sensors, have {}",
            outside.len()
        )));
    }
    let mut padding = Vec::with_capacity(needed);
    let mut next = outside.into_iter();
    // smaller half first, so it receives the most trusted sensors
    for group in [&mut b, &mut a] {
        while group.len() < min_subgroup {
            let s = next.next().expect("padding count checked");
            group.push(s);
            padding.push(s);
        }
    }
    Ok(EstimationSplit { a, b, padding })
}

/// Sequential BGT driver: exploration pools first, then greedy pools.
#[derive(Debug, Clone)]
pub struct BgtSession {
    belief: BeliefState,
    noise: NoiseModel,
    records: Vec<TestRecord>,
    exploration: VecDeque<Vec<usize>>,
    seed: u64,
    last_change: f64,
}

impl BgtSession {
    pub fn new(
        prior: BeliefState,
        noise: NoiseModel,
        exploration: Vec<Vec<usize>>,
        seed: u64,
    ) -> Self {
        Self {
            belief: prior,
            noise,
            records: Vec::new(),
            exploration: exploration.into(),
            seed,
            last_change: f64::INFINITY,
        }
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn records(&self) -> &[TestRecord] {
        &self.records
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn tests_used(&self) -> usize {
        self.records.len()
    }

    /// Largest marginal change caused by the latest test.
    pub fn last_change(&self) -> f64 {
        self.last_change
    }

    pub fn next_pool(&self) -> Result<Vec<usize>> {
        match self.exploration.front() {
            Some(pool) => Ok(pool.clone()),
            None => greedy_design_pool(
                &self.belief,
                self.noise,
                derive_seed(self.seed, "greedy", self.records.len() as u64),
            ),
        }
    }

    /// Record the result of testing `pool` and update beliefs.
    pub fn observe(&mut self, pool: Vec<usize>, positive: bool) -> Result<()> {
        let record = TestRecord::new(pool, positive)?;
        let next = bayes_update(&self.belief, &record, self.noise)?;
        self.last_change = self
            .belief
            .p
            .iter()
            .zip(&next.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if self.exploration.front() == Some(&record.pool) {
            self.exploration.pop_front();
        }
        self.belief = next;
        self.records.push(record);
        Ok(())
    }

    /// Design the next pool, run `test` on it, and record the result.
    pub fn step(&mut self, test: impl FnOnce(&[usize]) -> Result<bool>) -> Result<Vec<usize>> {
        let pool = self.next_pool()?;
        let positive = test(&pool)?;
        self.observe(pool.clone(), positive)?;
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Full joint posterior over all 2^N states (bit i set = sensor i faulty).
    struct Joint {
        n: usize,
        mass: Vec<f64>,
    }

    impl Joint {
        fn product(p: &[f64]) -> Self {
            let n = p.len();
            let mass = (0..1usize << n)
                .map(|s| {
                    (0..n)
                        .map(|i| if s >> i & 1 == 1 { 1.0 - p[i] } else { p[i] })
                        .product()
                })
                .collect();
            Self { n, mass }
        }

        fn update(&mut self, pool: &[usize], positive: bool, noise: NoiseModel) {
            let mask: usize = pool.iter().map(|&i| 1 << i).sum();
            for (s, m) in self.mass.iter_mut().enumerate() {
                let w = s & mask != 0;
                let lik = match (w, positive) {
                    (false, false) => 1.0 - noise.alpha,
                    (false, true) => noise.alpha,
                    (true, false) => noise.beta,
                    (true, true) => 1.0 - noise.beta,
                };
                *m *= lik;
            }
            let total: f64 = self.mass.iter().sum();
            self.mass.iter_mut().for_each(|m| *m /= total);
        }

        fn marginals(&self) -> Vec<f64> {
            (0..self.n)
                .map(|i| {
                    self.mass
                        .iter()
                        .enumerate()
                        .filter(|(s, _)| s >> i & 1 == 0)
                        .map(|(_, m)| m)
                        .sum()
                })
                .collect()
        }
    }

    fn random_pool(rng: &mut impl Rng, n: usize) -> Vec<usize> {
        loop {
            let pool: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
            if !pool.is_empty() {
                return pool;
            }
        }
    }

    #[test]
    fn update_matches_one_step_enumeration() {
        let noise = NoiseModel::symmetric(0.1).unwrap();
        for instance in 0..30u64 {
            let mut rng = rng_from_seed(instance);
            let mut belief = BeliefState::from_probabilities(
                (0..10).map(|_| rng.random_range(0.5..1.0)).collect(),
            )
            .unwrap();
            for _ in 0..20 {
                let pool = random_pool(&mut rng, 10);
                let positive = rng.random_bool(0.5);
                let mut joint = Joint::product(belief.probabilities());
                joint.update(&pool, positive, noise);
                belief = bayes_update(&belief, &TestRecord::new(pool, positive).unwrap(), noise)
                    .unwrap();
                for (a, b) in belief.probabilities().iter().zip(joint.marginals()) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn overlapping_tests_leave_product_form() {
        // the joint posterior after overlapping pools is not a product, so
        // chained marginal updates drift from a joint carried across steps
        let noise = NoiseModel::noiseless();
        let mut belief = BeliefState::uniform(2, 0.5).unwrap();
        let mut joint = Joint::product(belief.probabilities());
        for (pool, z) in [(vec![0, 1], true), (vec![0], false)] {
            joint.update(&pool, z, noise);
            belief = bayes_update(&belief, &TestRecord::new(pool, z).unwrap(), noise).unwrap();
        }
        assert!((joint.marginals()[1] - 0.0).abs() < 1e-15);
        assert!((belief.get(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn worked_update_example() {
        let noise = NoiseModel::symmetric(0.1).unwrap();
        let belief = BeliefState::uniform(2, 0.9).unwrap();
        assert!((pool_probability_normal(&belief, &[0, 1]).unwrap() - 0.81).abs() < 1e-15);
        let out =
            bayes_update(&belief, &TestRecord::new(vec![0, 1], true).unwrap(), noise).unwrap();
        let expected = 1.0 - 0.1 * 0.9 / 0.252;
        assert!((out.get(0) - expected).abs() < 1e-12);
        assert!((out.get(0) - 0.642_857_142_857_142_9).abs() < 1e-12);
        // joint enumeration: P(S1 = 0 | Z = 1) = (0.081 + 0.081) / 0.252
        assert!((out.get(0) - 0.162 / 0.252).abs() < 1e-12);
    }

    #[test]
    fn noiseless_singletons() {
        let noise = NoiseModel::noiseless();
        let belief = BeliefState::uniform(3, 0.7).unwrap();
        let neg = bayes_update(&belief, &TestRecord::new(vec![1], false).unwrap(), noise).unwrap();
        assert_eq!(neg.get(1), 1.0);
        let pos = bayes_update(&belief, &TestRecord::new(vec![1], true).unwrap(), noise).unwrap();
        assert_eq!(pos.get(1), 0.0);
        assert_eq!(pos.get(0), 0.7);
    }

    #[test]
    fn impossible_result_is_an_error() {
        let belief = BeliefState::uniform(3, 1.0).unwrap();
        let r = bayes_update(
            &belief,
            &TestRecord::new(vec![0], true).unwrap(),
            NoiseModel::noiseless(),
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn variance_examples() {
        let n0 = NoiseModel::noiseless();
        assert_eq!(predictive_variance(0.5, n0), 0.25);
        assert_eq!(predictive_variance(0.0, n0), 0.0);
        assert_eq!(predictive_variance(1.0, n0), 0.0);
        let n = NoiseModel::new(0.1, 0.05).unwrap();
        assert!((predictive_variance(0.6, n) - 0.2464).abs() < 1e-12);
        assert!((predictive_variance_expanded(0.6, n) - 0.2464).abs() < 1e-12);
    }

    #[test]
    fn target_examples() {
        assert_eq!(target_omega(NoiseModel::noiseless()), 0.5);
        assert!((target_omega(NoiseModel::symmetric(0.01).unwrap()) - 0.5).abs() < 1e-15);
        let n = NoiseModel::new(0.0, 0.3).unwrap();
        let t = target_omega(n);
        assert!((t - 0.4 / 1.4).abs() < 1e-15);
        let v = predictive_variance(t, n);
        assert!(v >= predictive_variance(t - 0.05, n));
        assert!(v >= predictive_variance(t + 0.05, n));
    }

    #[test]
    fn greedy_examples() {
        let n0 = NoiseModel::noiseless();
        for seed in 0..10 {
            let pool =
                greedy_design_pool(&BeliefState::uniform(12, 0.9).unwrap(), n0, seed).unwrap();
            assert_eq!(pool.len(), 7);
        }
        let mut p = vec![1.0; 6];
        p[3] = 0.5;
        let belief = BeliefState::from_probabilities(p).unwrap();
        for seed in 0..10 {
            let pool = greedy_design_pool(&belief, n0, seed).unwrap();
            assert!(pool.contains(&3));
            assert!((pool_probability_normal(&belief, &pool).unwrap() - 0.5).abs() < 1e-15);
        }
        let pool = greedy_design_pool(&BeliefState::uniform(5, 1.0).unwrap(), n0, 0).unwrap();
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn decoders() {
        let b = BeliefState::from_probabilities(vec![0.05, 0.9, 0.19]).unwrap();
        assert_eq!(threshold_decode(&b, 0.2).flags(), &[true, false, true]);
        assert_eq!(threshold_decode(&b, 0.0).count(), 0);
        assert_eq!(
            threshold_decode(&BeliefState::uniform(4, 1.0).unwrap(), 0.2).count(),
            0
        );
    }

    #[test]
    fn map_with_no_records_returns_prior_mode() {
        let prior = BeliefState::uniform(8, 0.9).unwrap();
        let s = map_decode(&[], &prior, NoiseModel::symmetric(0.1).unwrap(), 2, 0).unwrap();
        assert_eq!(s.count(), 0);
    }

    #[test]
    fn map_noiseless_unique_state() {
        let truth = FaultState::from_support(6, &[2]).unwrap();
        let records: Vec<TestRecord> = (0..6)
            .map(|i| TestRecord::new(vec![i], truth.is_faulty(i)).unwrap())
            .collect();
        let prior = BeliefState::uniform(6, 0.8).unwrap();
        let s = map_decode(&records, &prior, NoiseModel::noiseless(), 2, 0).unwrap();
        assert_eq!(s, truth);
    }

    #[test]
    fn map_matches_full_posterior_argmax() {
        let noise = NoiseModel::symmetric(0.1).unwrap();
        let prior = BeliefState::uniform(10, 0.8).unwrap();
        for instance in 0..20u64 {
            let mut rng = rng_from_seed(100 + instance);
            let records: Vec<TestRecord> = (0..15)
                .map(|_| TestRecord::new(random_pool(&mut rng, 10), rng.random_bool(0.5)).unwrap())
                .collect();
            let mut joint = Joint::product(prior.probabilities());
            for r in &records {
                joint.update(&r.pool, r.positive, noise);
            }
            let best = joint
                .mass
                .iter()
                .enumerate()
                .filter(|(s, _)| s.count_ones() <= 2)
                .map(|(_, m)| *m)
                .fold(0.0, f64::max);
            let s = map_decode(&records, &prior, noise, 2, instance).unwrap();
            let bits: usize = s.support().iter().map(|&i| 1 << i).sum();
            assert!((joint.mass[bits] - best).abs() <= 1e-12 * best.max(1e-300));
        }
    }

    #[test]
    fn exploration_pools() {
        assert!(random_initial_pools(10, 0, 0.5, 1).unwrap().is_empty());
        let pools = random_initial_pools(1000, 25, 0.5, 7).unwrap();
        let mean = pools.iter().map(Vec::len).sum::<usize>() as f64 / 25.0;
        assert!((mean - 500.0).abs() < 50.0);
        assert_eq!(pools, random_initial_pools(1000, 25, 0.5, 7).unwrap());
        assert!(pools.iter().all(|p| p.len() >= 2));
    }

    #[test]
    fn convergence() {
        let a = BeliefState::uniform(3, 0.5).unwrap();
        assert!(has_converged(&a, &a, 1e-9));
        let b = BeliefState::from_probabilities(vec![0.5, 0.51, 0.5]).unwrap();
        assert!(!has_converged(&a, &b, 0.005));
    }

    #[test]
    fn balanced_split_examples() {
        let belief =
            BeliefState::from_probabilities((0..18).map(|i| 0.5 + i as f64 * 0.02).collect())
                .unwrap();
        let s = balance_split_kf_bgt(&[0, 1, 2, 3, 4, 5, 6, 7], &belief, 3).unwrap();
        assert_eq!((s.a.len(), s.b.len()), (4, 4));
        assert!(s.padding.is_empty());

        let s = balance_split_kf_bgt(&[4, 9, 2], &belief, 3).unwrap();
        assert_eq!(s.b, vec![4, 17, 16]);
        assert_eq!(s.a, vec![2, 9, 15]);
        assert_eq!(s.padding, vec![17, 16, 15]);

        let s = balance_split_kf_bgt(&[0, 1], &belief, 1).unwrap();
        assert_eq!((s.a.len(), s.b.len()), (1, 1));
        assert!(s.padding.is_empty());

        let s = balance_split_kf_bgt(&[5], &belief, 3).unwrap();
        assert_eq!(s.b, vec![17, 16, 15]);
        assert_eq!(s.a, vec![5, 14, 13]);
        assert!(balance_split_kf_bgt(&[5], &belief, 0).is_err());

        let small = BeliefState::uniform(4, 0.9).unwrap();
        assert!(matches!(
            balance_split_kf_bgt(&[0, 1], &small, 3),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn session_runs_exploration_then_greedy() {
        let prior = BeliefState::uniform(50, 0.96).unwrap();
        let explore = random_initial_pools(50, 3, 0.5, 1).unwrap();
        let truth = FaultState::from_support(50, &[3, 30]).unwrap();
        let mut session = BgtSession::new(prior, NoiseModel::noiseless(), explore.clone(), 9);
        for k in 0..40 {
            let pool = session
                .step(|pool| Ok(pool.iter().any(|&i| truth.is_faulty(i))))
                .unwrap();
            if k < 3 {
                assert_eq!(pool, explore[k]);
            }
        }
        assert_eq!(threshold_decode(session.belief(), DEFAULT_SIGMA), truth);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn variance_identity(a in 0.0..0.49f64, b in 0.0..0.49f64, omega in 0.0..=1.0f64) {
            let n = NoiseModel::new(a, b).unwrap();
            prop_assert!((predictive_variance(omega, n) - predictive_variance_expanded(omega, n)).abs() < 1e-12);
        }

        #[test]
        fn target_is_argmax(a in 0.0..0.49f64, b in 0.0..0.49f64) {
            let n = NoiseModel::new(a, b).unwrap();
            let best = predictive_variance(target_omega(n), n);
            for k in 0..=1000 {
                prop_assert!(best >= predictive_variance(k as f64 / 1000.0, n) - 1e-15);
            }
        }

        #[test]
        fn update_contracts(
            p in proptest::collection::vec(0.0..=1.0f64, 2..12),
            a in 0.0..0.45f64,
            b in 0.0..0.45f64,
            mask in any::<u16>(),
            positive in any::<bool>(),
        ) {
            let n = p.len();
            let mut pool: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if pool.is_empty() {
                pool.push(0);
            }
            let noise = NoiseModel::new(a, b).unwrap();
            let belief = BeliefState::from_probabilities(p).unwrap();
            let record = TestRecord::new(pool.clone(), positive).unwrap();
            if let Ok(next) = bayes_update(&belief, &record, noise) {
                for i in 0..n {
                    if pool.contains(&i) {
                        if positive {
                            prop_assert!(next.get(i) <= belief.get(i) + 1e-15);
                        } else {
                            prop_assert!(next.get(i) >= belief.get(i) - 1e-15);
                        }
                    } else {
                        prop_assert_eq!(next.get(i).to_bits(), belief.get(i).to_bits());
                    }
                }
            }
        }

        #[test]
        fn greedy_trace_moves_toward_target(
            p in proptest::collection::vec(0.0..=1.0f64, 2..40),
            a in 0.0..0.45f64,
            b in 0.0..0.45f64,
            seed in any::<u64>(),
        ) {
            let noise = NoiseModel::new(a, b).unwrap();
            let belief = BeliefState::from_probabilities(p).unwrap();
            let (pool, trace) = greedy_design_pool_traced(&belief, noise, seed).unwrap();
            let t = target_omega(noise);
            prop_assert_eq!(pool.len(), trace.len());
            for w in trace.windows(2) {
                prop_assert!((w[1] - t).abs() < (w[0] - t).abs());
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
