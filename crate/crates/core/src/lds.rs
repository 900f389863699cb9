//! Discrete-time linear dynamical systems.
//!
//! ```text
//! x[k+1] = A x[k] + B u[k] + g[k],   g ~ N(0, R_G)
//! y[k]   = C x[k] + v[k],            v ~ N(0, R_V)
//! ```
//!
//! The module owns the model type, a generator for random stable models, a
//! seeded simulator, observation restriction to sensor subsets and a
//! value-exact text serialization.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{param, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Sampling period used when none is given: 200 Hz.
pub const DEFAULT_SAMPLE_PERIOD: f64 = 0.005;

/// State-space model of the monitored system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: Option<DMatrix<f64>>,
    c: DMatrix<f64>,
    process_noise_cov: DMatrix<f64>,
    meas_noise_cov: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Build a model, validating dimensions and that both noise covariances
    /// are symmetric positive semidefinite.
    pub fn new(
        a: DMatrix<f64>,
        b: Option<DMatrix<f64>>,
        c: DMatrix<f64>,
        process_noise_cov: DMatrix<f64>,
        meas_noise_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let q = a.nrows();
        if q == 0 || a.ncols() != q {
            return param("A must be square with q >= 1");
        }
        if let Some(b) = &b {
            if b.nrows() != q || b.ncols() == 0 {
                return param("B must be q x p with p >= 1");
            }
        }
        let n = c.nrows();
        if n == 0 || c.ncols() != q {
            return param("C must be N x q with N >= 1");
        }
        if process_noise_cov.shape() != (q, q) {
            return param("R_G must be q x q");
        }
        if meas_noise_cov.shape() != (n, n) {
            return param("R_V must be N x N");
        }
        let all = [&a, &c, &process_noise_cov, &meas_noise_cov];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite()))
            || b.as_ref().is_some_and(|b| b.iter().any(|v| !v.is_finite()))
        {
            return param("model matrices must be finite");
        }
        check_psd(&process_noise_cov, "R_G")?;
        check_psd(&meas_noise_cov, "R_V")?;
        Ok(Self {
            a,
            b,
            c,
            process_noise_cov,
            meas_noise_cov,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_sensors(&self) -> usize {
        self.c.nrows()
    }

    /// Input dimension `p`; zero when the model has no input matrix.
    pub fn input_dim(&self) -> usize {
        self.b.as_ref().map_or(0, |b| b.ncols())
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> Option<&DMatrix<f64>> {
        self.b.as_ref()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn process_noise_cov(&self) -> &DMatrix<f64> {
        &self.process_noise_cov
    }

    pub fn meas_noise_cov(&self) -> &DMatrix<f64> {
        &self.meas_noise_cov
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Keep only the given sensors, in the given order. The state equation is
    /// untouched.
    pub fn restrict_observation(&self, sensors: &[usize]) -> Result<Self> {
        let n = self.num_sensors();
        if sensors.is_empty() {
            return param("sensor subset must be non-empty");
        }
        let mut seen = vec![false; n];
        for &s in sensors {
            if s >= n {
                return param(format!("sensor index {s} out of range for N={n}"));
            }
            if std::mem::replace(&mut seen[s], true) {
                return param(format!("sensor index {s} repeated"));
            }
        }
        let c = self.c.select_rows(sensors);
        let r = self
            .meas_noise_cov
            .select_rows(sensors)
            .select_columns(sensors);
        Ok(Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c,
            process_noise_cov: self.process_noise_cov.clone(),
            meas_noise_cov: r,
        })
    }

    /// Stationary state covariance `P = A P A^T + R_G` (requires a stable `A`).
    pub fn stationary_state_cov(&self) -> DMatrix<f64> {
        solve_discrete_lyapunov(&self.a, &self.process_noise_cov)
    }

    /// Stationary covariance of the sensor outputs, `C P C^T + R_V`.
    pub fn stationary_output_cov(&self) -> DMatrix<f64> {
        let p = self.stationary_state_cov();
        &self.c * p * self.c.transpose() + &self.meas_noise_cov
    }

    /// Serialize to the model text document. Every number carries 17
    /// significant digits so parsing restores the exact `f64` values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"q\": {},", self.state_dim());
        let _ = writeln!(s, "  \"N\": {},", self.num_sensors());
        let _ = writeln!(s, "  \"p\": {},", self.input_dim());
        let _ = writeln!(s, "  \"A\": {},", row_major_json(&self.a));
        match &self.b {
            Some(b) => {
                let _ = writeln!(s, "  \"B\": {},", row_major_json(b));
            }
            None => s.push_str("  \"B\": null,\n"),
        }
        let _ = writeln!(s, "  \"C\": {},", row_major_json(&self.c));
        let _ = writeln!(s, "  \"R_G\": {},", row_major_json(&self.process_noise_cov));
        let _ = writeln!(s, "  \"R_V\": {}", row_major_json(&self.meas_noise_cov));
        s.push_str("}\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model document: {e}")))?;
        let (q, n, p) = (doc.q, doc.n, doc.p);
        let a = from_row_major(q, q, &doc.a, "A")?;
        let b = match (p, doc.b) {
            (0, None) => None,
            (0, Some(v)) if v.is_empty() => None,
            (p, Some(v)) if p > 0 => Some(from_row_major(q, p, &v, "B")?),
            _ => return Err(Error::Parse("B inconsistent with p".into())),
        };
        let c = from_row_major(n, q, &doc.c, "C")?;
        let rg = from_row_major(q, q, &doc.r_g, "R_G")?;
        let rv = from_row_major(n, n, &doc.r_v, "R_V")?;
        Self::new(a, b, c, rg, rv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    q: usize,
    #[serde(rename = "N")]
    n: usize,
    p: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Option<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "R_G")]
    r_g: Vec<f64>,
    #[serde(rename = "R_V")]
    r_v: Vec<f64>,
}

fn row_major_json(m: &DMatrix<f64>) -> String {
    let mut s = String::from("[");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i + j > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{:.16e}", m[(i, j)]);
        }
    }
    s.push(']');
    s
}

fn from_row_major(rows: usize, cols: usize, v: &[f64], name: &str) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Parse(format!(
            "{name}: expected {} values, found {}",
            rows * cols,
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return param(format!("{name} is not symmetric (max asymmetry {asym:e})"));
    }
    if is_diagonal(m) {
        if m.diagonal().iter().any(|&v| v < -PSD_TOL) {
            return param(format!("{name} has a negative diagonal entry"));
        }
        return Ok(());
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -PSD_TOL {
        return param(format!(
            "{name} is not positive semidefinite (eigenvalue {min_eig:e})"
        ));
    }
    Ok(())
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solve `P = A P A^T + Q` by Smith's doubling iteration.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &p * ak.transpose();
        let done = inc.amax() <= 1e-16 * p.amax().max(f64::MIN_POSITIVE);
        p += inc;
        if done {
            break;
        }
        ak = &ak * &ak;
    }
    symmetrize(&mut p);
    p
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `L` with `L L^T = m` for a symmetric PSD `m` (negative eigenvalues clipped).
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if is_diagonal(m) {
        return DMatrix::from_diagonal(&m.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut l = eig.eigenvectors;
    for (j, s) in scale.iter().enumerate() {
        l.column_mut(j).scale_mut(*s);
    }
    l
}

/// Parameters for [`generate_random_stable_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub state_dim: usize,
    pub num_sensors: usize,
    pub spectral_radius: f64,
    /// Diagonal value of `R_G`.
    pub process_noise: f64,
    /// Diagonal value of `R_V`.
    pub measurement_noise: f64,
    /// Number of input channels; zero for no `B`.
    pub input_dim: usize,
}

impl ModelParams {
    pub fn new(state_dim: usize, num_sensors: usize) -> Self {
        Self {
            state_dim,
            num_sensors,
            spectral_radius: 0.95,
            process_noise: 1.0,
            measurement_noise: 0.01,
            input_dim: 0,
        }
    }
}

/// Random stable model: `A` has i.i.d. standard-normal entries rescaled to the
/// target spectral radius, `C` is standard normal (redrawn until it has full
/// rank), noise covariances are scaled identities.
pub fn generate_random_stable_model(params: &ModelParams, seed: u64) -> Result<StateSpaceModel> {
    let q = params.state_dim;
    let n = params.num_sensors;
    if q < 1 || n < 2 {
        return param("need q >= 1 and N >= 2");
    }
    let rho = params.spectral_radius;
    if !(rho > 0.0 && rho < 1.0) {
        return param(format!("spectral radius {rho} outside (0, 1)"));
    }
    if !(params.process_noise >= 0.0 && params.measurement_noise >= 0.0) {
        return param("noise scales must be non-negative");
    }
    let mut rng = rng_from_seed(seed);
    let a = loop {
        let raw = normal_matrix(&mut rng, q, q);
        let r = spectral_radius(&raw);
        if r > 1e-8 {
            break raw * (rho / r);
        }
    };
    let c = loop {
        let c = normal_matrix(&mut rng, n, q);
        if c.clone().svd(false, false).rank(1e-9) == n.min(q) {
            break c;
        }
    };
    let b = (params.input_dim > 0).then(|| normal_matrix(&mut rng, q, params.input_dim));
    StateSpaceModel::new(
        a,
        b,
        c,
        DMatrix::identity(q, q) * params.process_noise,
        DMatrix::identity(n, n) * params.measurement_noise,
    )
}

fn normal_matrix(rng: &mut SimRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Project a model onto the `order` leading principal directions of its
/// stationary state covariance.
///
/// The reduced process noise is chosen so the reduced stationary covariance
/// matches the projected one, and the output variance carried by the
/// discarded directions is added to the diagonal of `R_V`. The result stands
/// in for a lower-order identified model of the same plant.
pub fn reduce_order(model: &StateSpaceModel, order: usize) -> Result<StateSpaceModel> {
    let q = model.state_dim();
    if order == 0 || order > q {
        return param(format!("reduced order {order} must be in 1..={q}"));
    }
    if order == q {
        return Ok(model.clone());
    }
    let sigma = model.stationary_state_cov();
    let eig = sigma.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let basis = eig.eigenvectors.select_columns(&idx[..order]);
    let bt = basis.transpose();
    let mut a_r = &bt * model.a() * &basis;
    let rho = spectral_radius(&a_r);
    if rho >= 0.999 {
        a_r *= 0.999 / rho;
    }
    let sigma_r = &bt * &sigma * &basis;
    let mut rg = &sigma_r - &a_r * &sigma_r * a_r.transpose();
    symmetrize(&mut rg);
    let e = rg.symmetric_eigen();
    let clipped = e.eigenvalues.map(|v| v.max(0.0));
    let mut rg = &e.eigenvectors * DMatrix::from_diagonal(&clipped) * e.eigenvectors.transpose();
    symmetrize(&mut rg);

    let c_r = model.c() * &basis;
    let residual = &sigma - &basis * &sigma_r * &bt;
    let extra = model.c() * residual * model.c().transpose();
    let mut rv = model.meas_noise_cov().clone();
    for i in 0..rv.nrows() {
        rv[(i, i)] += extra[(i, i)].max(0.0);
    }
    let b_r = model.b().map(|b| &bt * b);
    StateSpaceModel::new(a_r, b_r, c_r, rg, rv)
}

/// Sensor output samples, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    samples: DMatrix<f64>,
    sample_period: f64,
}

impl SensorTrace {
    pub fn new(samples: DMatrix<f64>, sample_period: f64) -> Result<Self> {
        if samples.nrows() == 0 {
            return param("trace needs at least one sample");
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return param("sample period must be positive");
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return param("trace contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_period,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn num_sensors(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.samples
    }

    /// Write as CSV: a `# sample_period=` line, a header, then one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# sample_period={:.16e}", self.sample_period);
        let header: Vec<String> = (0..self.num_sensors()).map(|j| format!("s{j}")).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for row in self.samples.row_iter() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&vals.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace".into()))?;
        let period = first
            .strip_prefix("# sample_period=")
            .ok_or_else(|| Error::Parse("missing sample_period line".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("sample_period: {e}")))?;
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing header".into()))?;
        let n = header.split(',').count();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))?;
            if vals.len() != n {
                return Err(Error::Parse(format!("row {i}: expected {n} columns")));
            }
            data.extend(vals);
            rows += 1;
        }
        Self::new(DMatrix::from_row_slice(rows, n, &data), period)
    }
}

/// True states, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub states: DMatrix<f64>,
}

/// Exogenous excitation of the simulated system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputMode {
    None,
    /// i.i.d. zero-mean Gaussian input on every channel with this variance.
    Gaussian {
        variance: f64,
    },
}

/// Source of the per-step random terms used by [`simulate_with`].
pub trait NoiseSource {
    fn process(&mut self, out: &mut DVector<f64>);
    fn measurement(&mut self, out: &mut DVector<f64>);
    fn input(&mut self, out: &mut DVector<f64>);
}

/// Gaussian draws with the model's covariances.
pub struct GaussianNoise {
    rng: SimRng,
    process_factor: DMatrix<f64>,
    meas_factor: DMatrix<f64>,
    input_std: f64,
    scratch: Vec<f64>,
}

impl GaussianNoise {
    pub fn new(model: &StateSpaceModel, input: InputMode, seed: u64) -> Self {
        let input_std = match input {
            InputMode::None => 0.0,
            InputMode::Gaussian { variance } => variance.max(0.0).sqrt(),
        };
        Self {
            rng: rng_from_seed(seed),
            process_factor: psd_factor(model.process_noise_cov()),
            meas_factor: psd_factor(model.meas_noise_cov()),
            input_std,
            scratch: Vec::new(),
        }
    }

    fn correlated(&mut self, factor_is_process: bool, out: &mut DVector<f64>) {
        let factor = if factor_is_process {
            &self.process_factor
        } else {
            &self.meas_factor
        };
        let dim = factor.ncols();
        self.scratch.clear();
        for _ in 0..dim {
            self.scratch.push(self.rng.sample(StandardNormal));
        }
        if is_diagonal(factor) {
            for i in 0..dim {
                out[i] = factor[(i, i)] * self.scratch[i];
            }
        } else {
            let z = DVector::from_column_slice(&self.scratch);
            out.gemv(1.0, factor, &z, 0.0);
        }
    }
}

impl NoiseSource for GaussianNoise {
    fn process(&mut self, out: &mut DVector<f64>) {
        self.correlated(true, out);
    }

    fn measurement(&mut self, out: &mut DVector<f64>) {
        self.correlated(false, out);
    }

    fn input(&mut self, out: &mut DVector<f64>) {
        for v in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = self.input_std * z;
        }
    }
}

/// Simulate `steps` samples from `x[0] = 0` with seeded Gaussian noise.
pub fn simulate(
    model: &StateSpaceModel,
    steps: usize,
    input: InputMode,
    seed: u64,
) -> Result<(StateTrajectory, SensorTrace)> {
    if matches!(input, InputMode::Gaussian { .. }) && model.b().is_none() {
        return Err(Error::Configuration(
            "gaussian input requested but the model has no B matrix".into(),
        ));
    }
    let mut noise = GaussianNoise::new(model, input, derive_seed(seed, "simulate", 0));
    simulate_with(model, steps, input, &mut noise)
}

/// Simulate with an arbitrary noise source.
pub fn simulate_with(
    model: &StateSpaceModel,
    steps: usize,
    input: InputMode,
    noise: &mut dyn NoiseSource,
) -> Result<(StateTrajectory, SensorTrace)> {
    if steps == 0 {
        return param("need at least one time step");
    }
    let use_input = matches!(input, InputMode::Gaussian { .. });
    if use_input && model.b().is_none() {
        return Err(Error::Configuration(
            "gaussian input requested but the model has no B matrix".into(),
        ));
    }
    let (q, n) = (model.state_dim(), model.num_sensors());
    let mut states = DMatrix::zeros(steps, q);
    let mut outputs = DMatrix::zeros(steps, n);
    let mut x = DVector::zeros(q);
    let mut next = DVector::zeros(q);
    let mut y = DVector::zeros(n);
    let mut g = DVector::zeros(q);
    let mut v = DVector::zeros(n);
    let mut u = DVector::zeros(model.input_dim());
    for k in 0..steps {
        noise.measurement(&mut v);
        y.gemv(1.0, model.c(), &x, 0.0);
        y += &v;
        states.set_row(k, &x.transpose());
        outputs.set_row(k, &y.transpose());

        noise.process(&mut g);
        next.gemv(1.0, model.a(), &x, 0.0);
        next += &g;
        if use_input {
            noise.input(&mut u);
            if let Some(b) = model.b() {
                next.gemv(1.0, b, &u, 1.0);
            }
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok((
        StateTrajectory { states },
        SensorTrace::new(outputs, DEFAULT_SAMPLE_PERIOD)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, rg: f64, rv: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_element(1, 1, a),
            None,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, rg),
            DMatrix::from_element(1, 1, rv),
        )
        .unwrap()
    }

    struct UnitProcessNoise;
    impl NoiseSource for UnitProcessNoise {
        fn process(&mut self, out: &mut DVector<f64>) {
            out.fill(1.0);
        }
        fn measurement(&mut self, out: &mut DVector<f64>) {
            out.fill(0.0);
        }
        fn input(&mut self, out: &mut DVector<f64>) {
            out.fill(0.0);
        }
    }

    #[test]
    fn one_by_one_rescale_is_exact() {
        let mut p = ModelParams::new(1, 2);
        p.spectral_radius = 0.5;
        p.process_noise = 0.0;
        p.measurement_noise = 0.0;
        let m = generate_random_stable_model(&p, 7).unwrap();
        assert_eq!(m.a()[(0, 0)].abs(), 0.5);
    }

    #[test]
    fn generated_radius_matches_target() {
        let mut p = ModelParams::new(20, 18);
        p.process_noise = 1e-4;
        p.measurement_noise = 1e-4;
        let m = generate_random_stable_model(&p, 1).unwrap();
        assert!((m.spectral_radius() - 0.95).abs() < 1e-9);
        assert_eq!(m, generate_random_stable_model(&p, 1).unwrap());
        assert_eq!(m.c().clone().svd(false, false).rank(1e-9), 18);
    }

    #[test]
    fn generator_rejects_bad_params() {
        let mut p = ModelParams::new(3, 1);
        assert!(generate_random_stable_model(&p, 0).is_err());
        p.num_sensors = 4;
        p.spectral_radius = 1.0;
        assert!(generate_random_stable_model(&p, 0).is_err());
    }

    #[test]
    fn zero_noise_outputs_are_zero() {
        let m = scalar(0.5, 0.0, 0.0);
        let (_, trace) = simulate(&m, 50, InputMode::None, 3).unwrap();
        assert!(trace.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_process_noise_follows_recursion() {
        let m = scalar(0.5, 1.0, 0.0);
        let (traj, trace) = simulate_with(&m, 6, InputMode::None, &mut UnitProcessNoise).unwrap();
        let expected = [0.0, 1.0, 1.5, 1.75, 1.875, 1.9375];
        for (k, e) in expected.iter().enumerate() {
            assert_eq!(traj.states[(k, 0)], *e);
            assert_eq!(trace.samples()[(k, 0)], *e);
        }
    }

    #[test]
    fn gaussian_input_requires_b() {
        let m = scalar(0.5, 1.0, 0.0);
        let err = simulate(&m, 5, InputMode::Gaussian { variance: 1.0 }, 0).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn gaussian_input_drives_states() {
        let mut p = ModelParams::new(3, 4);
        p.process_noise = 0.0;
        p.measurement_noise = 0.0;
        p.input_dim = 2;
        let m = generate_random_stable_model(&p, 5).unwrap();
        let (traj, _) = simulate(&m, 20, InputMode::Gaussian { variance: 1.0 }, 9).unwrap();
        assert!(traj.states.amax() > 0.0);
    }

    #[test]
    fn empirical_output_variance_matches_lyapunov() {
        let m = scalar(0.8, 0.5, 0.2);
        let (_, trace) = simulate(&m, 50_000, InputMode::None, 11).unwrap();
        let col = trace.samples().column(0);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        let analytic = m.stationary_output_cov()[(0, 0)];
        assert!((0.5 / (1.0 - 0.64) + 0.2 - analytic).abs() < 1e-12);
        assert!(
            (var - analytic).abs() / analytic < 0.05,
            "{var} vs {analytic}"
        );
    }

    #[test]
    fn restriction_selects_rows_in_order() {
        let p = ModelParams::new(3, 5);
        let m = generate_random_stable_model(&p, 2).unwrap();
        assert_eq!(m.restrict_observation(&[0, 1, 2, 3, 4]).unwrap(), m);
        let r = m.restrict_observation(&[3, 1]).unwrap();
        assert_eq!(r.c().row(0), m.c().row(3));
        assert_eq!(r.c().row(1), m.c().row(1));
        assert_eq!(r.a(), m.a());
        assert_eq!(r.meas_noise_cov().shape(), (2, 2));
        assert!(m.restrict_observation(&[]).is_err());
        assert!(m.restrict_observation(&[5]).is_err());
        assert!(m.restrict_observation(&[1, 1]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut p = ModelParams::new(4, 3);
        p.input_dim = 2;
        let m = generate_random_stable_model(&p, 13).unwrap();
        let back = StateSpaceModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_asymmetric_noise() {
        let mut rg = DMatrix::identity(2, 2);
        rg[(0, 1)] = 0.5;
        let r = StateSpaceModel::new(
            DMatrix::identity(2, 2) * 0.5,
            None,
            DMatrix::identity(2, 2),
            rg,
            DMatrix::identity(2, 2),
        );
        assert!(r.is_err());
    }

    #[test]
    fn reduced_model_is_stable_and_smaller() {
        let p = ModelParams::new(20, 18);
        let m = generate_random_stable_model(&p, 4).unwrap();
        let r = reduce_order(&m, 11).unwrap();
        assert_eq!(r.state_dim(), 11);
        assert_eq!(r.num_sensors(), 18);
        assert!(r.spectral_radius() < 1.0);
    }

    #[test]
    fn trace_csv_round_trip() {
        let p = ModelParams::new(2, 3);
        let m = generate_random_stable_model(&p, 1).unwrap();
        let (_, t) = simulate(&m, 10, InputMode::None, 1).unwrap();
        assert_eq!(SensorTrace::from_csv(&t.to_csv()).unwrap(), t);
    }
}
