//! Non-adaptive (combinatorial) group testing.
//!
//! A 0-1 measurement matrix assigns sensors to tests; boolean tests give one
//! bit per row; decoding enumerates every fault state of support at most `d`
//! and keeps the closest one to the observed results.

use std::fmt::Write as _;

use itertools::Itertools;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::bgt::NoiseModel;
use crate::error::{param, Error, Result};
use crate::faults::FaultState;
use crate::rng::rng_from_seed;

/// Default cap on exhaustive enumerations.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Fixed-width bitset over test indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Bits(Vec<u64>);

impl Bits {
    pub(crate) fn zeros(len: usize) -> Self {
        Bits(vec![0; len.div_ceil(64).max(1)])
    }

    pub(crate) fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub(crate) fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn or_assign(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }

    fn clear(&mut self) {
        self.0.fill(0);
    }

    fn hamming(&self, other: &Bits) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// True when `self` has a bit that `other` lacks.
    fn has_private_bit(&self, other: &Bits) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| a & !b != 0)
    }
}

/// The `M x N` 0-1 matrix of test pools; row `i` lists the sensors in test `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
    columns: Vec<Bits>,
}

impl MeasurementMatrix {
    /// Build from row-major bits.
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return param("matrix needs at least one row and one column");
        }
        if bits.len() != rows * cols {
            return param("bit count does not match dimensions");
        }
        let mut columns = vec![Bits::zeros(rows); cols];
        for i in 0..rows {
            for (j, col) in columns.iter_mut().enumerate() {
                if bits[i * cols + j] {
                    col.set(i);
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            bits,
            columns,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return param("ragged matrix rows");
        }
        let bits = rows.iter().flatten().map(|&b| b != 0).collect();
        Self::new(m, n, bits)
    }

    pub fn num_tests(&self) -> usize {
        self.rows
    }

    pub fn num_sensors(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    /// Sensors in test `row`.
    pub fn pool(&self, row: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.get(row, j)).collect()
    }

    pub fn pools(&self) -> Vec<Vec<usize>> {
        (0..self.rows).map(|i| self.pool(i)).collect()
    }

    pub(crate) fn column_bits(&self, col: usize) -> &Bits {
        &self.columns[col]
    }

    /// Every row has at least two ones, so each pool can be split.
    pub fn rows_splittable(&self) -> bool {
        (0..self.rows).all(|i| self.pool(i).len() >= 2)
    }

    /// Indices of rows identical to an earlier row.
    pub fn duplicate_rows(&self) -> Vec<usize> {
        let mut dups = Vec::new();
        for i in 1..self.rows {
            let row = &self.bits[i * self.cols..(i + 1) * self.cols];
            if (0..i).any(|k| &self.bits[k * self.cols..(k + 1) * self.cols] == row) {
                dups.push(i);
            }
        }
        dups
    }

    pub fn density(&self) -> f64 {
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    /// Text form: `"M N"` then one line of `0`/`1` characters per row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                s.push(if self.get(i, j) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("matrix header: {e}")))?;
        let [m, n] = dims[..] else {
            return Err(Error::Parse("matrix header must be 'M N'".into()));
        };
        let mut bits = Vec::with_capacity(m * n);
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing matrix row {i}")))?;
            if line.len() != n {
                return Err(Error::Parse(format!(
                    "row {i} has {} characters, expected {n}",
                    line.len()
                )));
            }
            for ch in line.chars() {
                match ch {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => return Err(Error::Parse(format!("row {i}: unexpected '{other}'"))),
                }
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Parse("trailing data after matrix rows".into()));
        }
        Self::new(m, n, bits)
    }
}

/// Observed (possibly noisy) test results, one bit per test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestResults {
    pub z: Vec<bool>,
}

impl TestResults {
    pub fn from_bits(bits: &[u8]) -> Self {
        Self {
            z: bits.iter().map(|&b| b != 0).collect(),
        }
    }

    fn to_bits(&self) -> Bits {
        let mut b = Bits::zeros(self.z.len());
        for (i, &v) in self.z.iter().enumerate() {
            if v {
                b.set(i);
            }
        }
        b
    }
}

/// I.i.d. Bernoulli(`density`) entries; rows with fewer than two ones are
/// redrawn.
pub fn generate_random_matrix(
    rows: usize,
    cols: usize,
    density: f64,
    seed: u64,
) -> Result<MeasurementMatrix> {
    if rows < 1 || cols < 2 {
        return param("need M >= 1 and N >= 2");
    }
    if !(density > 0.0 && density < 1.0) {
        return param(format!("density {density} outside (0, 1)"));
    }
    let mut rng = rng_from_seed(seed);
    let mut bits = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        loop {
            let row: Vec<bool> = (0..cols).map(|_| rng.random_bool(density)).collect();
            if row.iter().filter(|&&b| b).count() >= 2 {
                bits.extend(row);
                break;
            }
        }
    }
    MeasurementMatrix::new(rows, cols, bits)
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of fault states with support at most `d` among `n` sensors.
pub fn count_sparse_states(n: usize, d: usize) -> u128 {
    (0..=d.min(n)).map(|j| binomial(n as u128, j as u128)).sum()
}

/// Exhaustive `d`-disjunctness check: for every column and every `d` other
/// columns, some row has a one in the former and zeros in all the latter.
pub fn is_d_disjunct(matrix: &MeasurementMatrix, d: usize) -> Result<bool> {
    is_d_disjunct_capped(matrix, d, DEFAULT_ENUMERATION_CAP)
}

pub fn is_d_disjunct_capped(matrix: &MeasurementMatrix, d: usize, cap: u128) -> Result<bool> {
    let n = matrix.num_sensors();
    if d == 0 || d + 1 > n {
        return param(format!("need 1 <= d <= N-1 (d={d}, N={n})"));
    }
    let required = n as u128 * binomial(n as u128 - 1, d as u128);
    if required > cap {
        return Err(Error::Feasibility { required, cap });
    }
    let mut union = Bits::zeros(matrix.num_tests());
    for j in 0..n {
        let others = (0..n).filter(|&k| k != j);
        for subset in others.combinations(d) {
            union.clear();
            for &k in &subset {
                union.or_assign(matrix.column_bits(k));
            }
            if !matrix.column_bits(j).has_private_bit(&union) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Weaker property: any `d + 1` columns have a row with exactly one 1 among
/// them. For `d = 1` this only asks that columns be pairwise distinct, and it
/// does not guarantee recovery of `d`-sparse states.
pub fn is_weakly_d_disjunct(matrix: &MeasurementMatrix, d: usize) -> Result<bool> {
    let n = matrix.num_sensors();
    if d == 0 || d + 1 > n {
        return param(format!("need 1 <= d <= N-1 (d={d}, N={n})"));
    }
    let required = binomial(n as u128, d as u128 + 1);
    if required > DEFAULT_ENUMERATION_CAP {
        return Err(Error::Feasibility {
            required,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    Ok((0..n).combinations(d + 1).all(|cols| {
        (0..matrix.num_tests()).any(|i| cols.iter().filter(|&&j| matrix.get(i, j)).count() == 1)
    }))
}

/// Column-by-column rejection sampling of a random `d`-disjunct matrix.
///
/// Each new column is redrawn (Bernoulli(`density`) entries) until the
/// partial matrix stays `d`-disjunct; after `max_column_draws` failures for
/// one column the whole construction restarts. The result is checked with
/// [`is_d_disjunct`] and has every row with at least two ones.
pub fn search_disjunct_matrix(
    rows: usize,
    cols: usize,
    d: usize,
    density: f64,
    seed: u64,
    max_restarts: usize,
) -> Result<MeasurementMatrix> {
    if rows < 1 || cols < d + 1 || d == 0 {
        return param("need M >= 1 and 1 <= d < N");
    }
    if !(density > 0.0 && density < 1.0) {
        return param(format!("density {density} outside (0, 1)"));
    }
    const MAX_COLUMN_DRAWS: usize = 2_000;
    let mut rng = rng_from_seed(seed);
    for _ in 0..max_restarts {
        let mut columns: Vec<Bits> = Vec::with_capacity(cols);
        'column: while columns.len() < cols {
            for _ in 0..MAX_COLUMN_DRAWS {
                let mut c = Bits::zeros(rows);
                for i in 0..rows {
                    if rng.random_bool(density) {
                        c.set(i);
                    }
                }
                if extends_disjunct(&columns, &c, d) {
                    columns.push(c);
                    continue 'column;
                }
            }
            break;
        }
        if columns.len() < cols {
            continue;
        }
        let mut bits = vec![false; rows * cols];
        for (j, c) in columns.iter().enumerate() {
            for i in 0..rows {
                bits[i * cols + j] = c.get(i);
            }
        }
        let m = MeasurementMatrix::new(rows, cols, bits)?;
        if m.rows_splittable() && is_d_disjunct(&m, d)? {
            return Ok(m);
        }
    }
    Err(Error::Configuration(format!(
        "no {d}-disjunct {rows}x{cols} matrix found in {max_restarts} restarts"
    )))
}

/// Whether appending `new` to `columns` keeps every check involving `new`
/// satisfied.
fn extends_disjunct(columns: &[Bits], new: &Bits, d: usize) -> bool {
    let k = columns.len();
    if k == 0 {
        return true;
    }
    let len = new.0.len();
    // new column must escape the union of any d old columns
    for subset in (0..k).combinations(d.min(k)) {
        let mut union = Bits(vec![0; len]);
        for &i in &subset {
            union.or_assign(&columns[i]);
        }
        if !new.has_private_bit(&union) {
            return false;
        }
    }
    // every old column must escape unions that include the new column
    if d >= 1 {
        for j in 0..k {
            let others = (0..k).filter(|&i| i != j);
            for subset in others.combinations((d - 1).min(k - 1)) {
                let mut union = new.clone();
                for &i in &subset {
                    union.or_assign(&columns[i]);
                }
                if !columns[j].has_private_bit(&union) {
                    return false;
                }
            }
        }
    }
    true
}

/// Noiseless boolean tests: `z[i] = OR_j (phi[i][j] AND s[j])`.
pub fn boolean_apply(matrix: &MeasurementMatrix, state: &FaultState) -> Result<TestResults> {
    if state.len() != matrix.num_sensors() {
        return param("fault state length does not match matrix columns");
    }
    let z = (0..matrix.num_tests())
        .map(|i| state.support().iter().any(|&j| matrix.get(i, j)))
        .collect();
    Ok(TestResults { z })
}

/// Candidate scoring shared by the decoders: lower is better.
enum Score<'a> {
    Hamming,
    NegLogPosterior {
        noise: NoiseModel,
        prior_normal: &'a [f64],
    },
}

/// Enumerate all states with support `<= d` over per-sensor test-membership
/// bitsets, keep the best score, then the smallest support, then a seeded
/// uniform choice.
fn enumerate_decode(
    columns: &[&Bits],
    z: &Bits,
    num_tests: usize,
    d: usize,
    score: Score<'_>,
    seed: u64,
    cap: u128,
) -> Result<FaultState> {
    let n = columns.len();
    let required = count_sparse_states(n, d);
    if required > cap {
        return Err(Error::Feasibility { required, cap });
    }
    let mut rng = rng_from_seed(seed);
    let tie_tol = 1e-12;
    let mut best_score = f64::INFINITY;
    let mut best_size = usize::MAX;
    let mut ties: Vec<Vec<usize>> = Vec::new();
    let mut w = Bits::zeros(num_tests);

    let (ll_hit, ll_miss, prior_terms) = match &score {
        Score::Hamming => (None, None, None),
        Score::NegLogPosterior {
            noise,
            prior_normal,
        } => {
            // per-test log-likelihood given (w, z)
            let l = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
            let hit = [l(1.0 - noise.alpha), l(noise.alpha)]; // w = 0: z = 0 / z = 1
            let miss = [l(noise.beta), l(1.0 - noise.beta)]; // w = 1: z = 0 / z = 1
            let terms: Vec<(f64, f64)> = prior_normal.iter().map(|&p| (l(p), l(1.0 - p))).collect();
            (Some(hit), Some(miss), Some(terms))
        }
    };
    let base_prior: f64 = prior_terms
        .as_ref()
        .map_or(0.0, |t| t.iter().map(|(normal, _)| normal).sum());

    for size in 0..=d.min(n) {
        for support in (0..n).combinations(size) {
            w.clear();
            for &j in &support {
                w.or_assign(columns[j]);
            }
            let s = match (&score, &ll_hit, &ll_miss, &prior_terms) {
                (Score::Hamming, ..) => w.hamming(z) as f64,
                (_, Some(hit), Some(miss), Some(terms)) => {
                    let mut ll = 0.0;
                    for i in 0..num_tests {
                        let zi = z.get(i) as usize;
                        ll += if w.get(i) { miss[zi] } else { hit[zi] };
                    }
                    let mut lp = base_prior;
                    for &j in &support {
                        lp += terms[j].1 - terms[j].0;
                    }
                    -(ll + lp)
                }
                _ => unreachable!(),
            };
            if s < best_score - tie_tol {
                best_score = s;
                best_size = size;
                ties.clear();
                ties.push(support);
            } else if (s - best_score).abs() <= tie_tol && size == best_size {
                ties.push(support);
            }
        }
    }
    let chosen = ties
        .choose(&mut rng)
        .ok_or_else(|| Error::Numerical("no decodable fault state".into()))?;
    FaultState::from_support(n, chosen)
}

/// Minimum Hamming-distance decoding over states with support `<= d`.
pub fn min_distance_decode(
    matrix: &MeasurementMatrix,
    z: &TestResults,
    d: usize,
    seed: u64,
) -> Result<FaultState> {
    min_distance_decode_capped(matrix, z, d, seed, DEFAULT_ENUMERATION_CAP)
}

pub fn min_distance_decode_capped(
    matrix: &MeasurementMatrix,
    z: &TestResults,
    d: usize,
    seed: u64,
    cap: u128,
) -> Result<FaultState> {
    if z.z.len() != matrix.num_tests() {
        return param("result length does not match matrix rows");
    }
    let cols: Vec<&Bits> = (0..matrix.num_sensors())
        .map(|j| matrix.column_bits(j))
        .collect();
    enumerate_decode(
        &cols,
        &z.to_bits(),
        matrix.num_tests(),
        d,
        Score::Hamming,
        seed,
        cap,
    )
}

/// Maximum-likelihood decoding with explicit test error rates and a
/// per-sensor prior probability of being normal.
pub fn likelihood_decode(
    matrix: &MeasurementMatrix,
    z: &TestResults,
    d: usize,
    noise: NoiseModel,
    prior_normal: &[f64],
    seed: u64,
) -> Result<FaultState> {
    if z.z.len() != matrix.num_tests() || prior_normal.len() != matrix.num_sensors() {
        return param("dimension mismatch in likelihood decoding");
    }
    let cols: Vec<&Bits> = (0..matrix.num_sensors())
        .map(|j| matrix.column_bits(j))
        .collect();
    let score = Score::NegLogPosterior {
        noise,
        prior_normal,
    };
    enumerate_decode(
        &cols,
        &z.to_bits(),
        matrix.num_tests(),
        d,
        score,
        seed,
        DEFAULT_ENUMERATION_CAP,
    )
}

/// MAP decoding over an arbitrary list of pools and results.
pub(crate) fn map_decode_pools(
    n: usize,
    pools: &[&[usize]],
    results: &[bool],
    noise: NoiseModel,
    prior_normal: &[f64],
    d: usize,
    seed: u64,
    cap: u128,
) -> Result<FaultState> {
    let m = pools.len();
    let mut columns = vec![Bits::zeros(m); n];
    for (i, pool) in pools.iter().enumerate() {
        for &j in pool.iter() {
            if j >= n {
                return param(format!("sensor {j} out of range"));
            }
            columns[j].set(i);
        }
    }
    let mut z = Bits::zeros(m);
    for (i, &r) in results.iter().enumerate() {
        if r {
            z.set(i);
        }
    }
    let cols: Vec<&Bits> = columns.iter().collect();
    let score = Score::NegLogPosterior {
        noise,
        prior_normal,
    };
    enumerate_decode(&cols, &z, m, d, score, seed, cap)
}

/// Fault distribution assumed when sizing the number of tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultRegime {
    RandomFaults,
    Adversarial,
}

/// `ceil(c * d * log2 N)` for random faults, `ceil(c * d^2 * log2 N)` for
/// adversarial placement.
pub fn suggest_num_tests(n: usize, d: usize, regime: FaultRegime, constant: f64) -> Result<usize> {
    if d < 1 || d >= n {
        return param(format!("need 1 <= d < N (d={d}, N={n})"));
    }
    if !(constant > 0.0) {
        return param("constant must be positive");
    }
    let d = d as f64;
    let lg = (n as f64).log2();
    let raw = match regime {
        FaultRegime::RandomFaults => constant * d * lg,
        FaultRegime::Adversarial => constant * d * d * lg,
    };
    // guard against 9.000000000000002-style round-up
    let rounded = raw.round();
    let v = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    Ok(v.max(1.0) as usize)
}
