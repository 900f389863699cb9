//! Fault states and the four injected fault types: spike, non-linear
//! transduction, mean drift and excessive noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{param, Error, Result};
use crate::lds::SensorTrace;
use crate::rng::{derive_seed, rng_from_seed};

/// Which sensors are faulty (`true` = faulty).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaultState {
    flags: Vec<bool>,
}

impl FaultState {
    pub fn healthy(n: usize) -> Self {
        Self {
            flags: vec![false; n],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn from_support(n: usize, support: &[usize]) -> Result<Self> {
        let mut flags = vec![false; n];
        for &i in support {
            if i >= n {
                return param(format!("sensor {i} out of range for N={n}"));
            }
            flags[i] = true;
        }
        Ok(Self { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_faulty(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn support(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Draw a fault state whose support size is uniform on `{0, ..., d_max}`.
pub fn sample_fault_state(n: usize, d_max: usize, seed: u64) -> Result<FaultState> {
    sample_fault_state_between(n, 0, d_max, seed)
}

/// Support size uniform on `{d_min, ..., d_max}`, support uniform without
/// replacement.
pub fn sample_fault_state_between(
    n: usize,
    d_min: usize,
    d_max: usize,
    seed: u64,
) -> Result<FaultState> {
    if d_max > n {
        return param(format!("d_max={d_max} exceeds N={n}"));
    }
    if d_min > d_max {
        return param(format!("d_min={d_min} exceeds d_max={d_max}"));
    }
    let mut rng = rng_from_seed(seed);
    let size = rng.random_range(d_min..=d_max);
    let mut flags = vec![false; n];
    for i in sample(&mut rng, n, size) {
        flags[i] = true;
    }
    Ok(FaultState { flags })
}

/// A magnitude either in signal units or relative to the clean column's
/// sample variance or standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    Absolute(f64),
    /// Multiple of the clean column's sample variance.
    Variance(f64),
    /// Multiple of the clean column's sample standard deviation.
    Std(f64),
}

impl Amount {
    fn resolve(self, column_variance: f64) -> f64 {
        match self {
            Amount::Absolute(v) => v,
            Amount::Variance(k) => k * column_variance,
            Amount::Std(k) => k * column_variance.sqrt(),
        }
    }

    fn factor(self) -> f64 {
        match self {
            Amount::Absolute(v) | Amount::Variance(v) | Amount::Std(v) => v,
        }
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Amount::Absolute(v) => write!(f, "{v}"),
            Amount::Variance(k) => write!(f, "{k}*var"),
            Amount::Std(k) => write!(f, "{k}*std"),
        }
    }
}

/// Parses `1.5`, `0.5*var` or `2*std`.
impl FromStr for Amount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("amount '{s}': {e}")))
        };
        if let Some(k) = s.strip_suffix("*var") {
            Ok(Amount::Variance(num(k)?))
        } else if let Some(k) = s.strip_suffix("*std") {
            Ok(Amount::Std(num(k)?))
        } else {
            Ok(Amount::Absolute(num(s)?))
        }
    }
}

/// Fault model applied to each faulty sensor's column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultSpec {
    /// Sparse impulses: each sample is hit with probability `rate`.
    Spike { rate: f64, mean_amplitude: Amount },
    /// Outputs beyond `range_fraction * max|y|` are compressed with `slope`.
    Nonlinearity { range_fraction: f64, slope: f64 },
    /// Slow band-limited additive drift with the given standard deviation.
    MeanDrift { max_freq_hz: f64, magnitude: Amount },
    /// Additive zero-mean Gaussian noise.
    ExcessiveNoise { noise_variance: Amount },
}

impl FaultSpec {
    pub fn default_spike() -> Self {
        FaultSpec::Spike {
            rate: 0.05,
            mean_amplitude: Amount::Variance(1.0),
        }
    }

    pub fn default_nonlinearity() -> Self {
        FaultSpec::Nonlinearity {
            range_fraction: 0.8,
            slope: 0.3,
        }
    }

    pub fn default_mean_drift() -> Self {
        FaultSpec::MeanDrift {
            max_freq_hz: 5.0,
            magnitude: Amount::Variance(0.5),
        }
    }

    pub fn default_excessive_noise() -> Self {
        FaultSpec::ExcessiveNoise {
            noise_variance: Amount::Variance(0.5),
        }
    }

    /// Default parameters keyed by kind name.
    pub fn default_for_kind(kind: &str) -> Result<Self> {
        match kind {
            "spike" => Ok(Self::default_spike()),
            "nonlinearity" => Ok(Self::default_nonlinearity()),
            "mean_drift" => Ok(Self::default_mean_drift()),
            "excessive_noise" => Ok(Self::default_excessive_noise()),
            other => Err(Error::Parse(format!("unknown fault kind '{other}'"))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FaultSpec::Spike { .. } => "spike",
            FaultSpec::Nonlinearity { .. } => "nonlinearity",
            FaultSpec::MeanDrift { .. } => "mean_drift",
            FaultSpec::ExcessiveNoise { .. } => "excessive_noise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        match *self {
            FaultSpec::Spike {
                rate,
                mean_amplitude,
            } => {
                if !open_unit(rate) {
                    return param(format!("spike rate {rate} outside (0, 1)"));
                }
                if !(mean_amplitude.factor() > 0.0) {
                    return param("spike mean_amplitude must be positive");
                }
            }
            FaultSpec::Nonlinearity {
                range_fraction,
                slope,
            } => {
                if !open_unit(range_fraction) {
                    return param(format!("range_fraction {range_fraction} outside (0, 1)"));
                }
                if !(slope >= 0.0) {
                    return param("nonlinearity slope must be non-negative");
                }
            }
            FaultSpec::MeanDrift {
                max_freq_hz,
                magnitude,
            } => {
                if !(max_freq_hz > 0.0) {
                    return param("max_freq_hz must be positive");
                }
                if !(magnitude.factor() > 0.0) {
                    return param("drift magnitude must be positive");
                }
            }
            FaultSpec::ExcessiveNoise { noise_variance } => {
                if !(noise_variance.factor() > 0.0) {
                    return param("noise_variance must be positive");
                }
            }
        }
        Ok(())
    }
}

const DRIFT_COMPONENTS: usize = 8;

/// Apply `spec` to every faulty column. Healthy columns are copied unchanged.
pub fn inject(
    trace: &SensorTrace,
    state: &FaultState,
    spec: &FaultSpec,
    seed: u64,
) -> Result<SensorTrace> {
    if state.len() != trace.num_sensors() {
        return param(format!(
            "fault state has {} entries, trace has {} sensors",
            state.len(),
            trace.num_sensors()
        ));
    }
    spec.validate()?;
    let mut out = trace.clone();
    let dt = trace.sample_period();
    for j in state.support() {
        let mut rng = rng_from_seed(derive_seed(seed, "inject", j as u64));
        let mut col = out.samples_mut().column_mut(j);
        let len = col.len();
        let mean = col.mean();
        let var = if len > 1 {
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1) as f64
        } else {
            0.0
        };
        match *spec {
            FaultSpec::Spike {
                rate,
                mean_amplitude,
            } => {
                let amp = mean_amplitude.resolve(var);
                for v in col.iter_mut() {
                    if rng.random::<f64>() < rate {
                        let u: f64 = rng.random_range(-1.0..=1.0);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        *v += sign * amp * (1.0 + 0.2 * u);
                    }
                }
            }
            FaultSpec::Nonlinearity {
                range_fraction,
                slope,
            } => {
                let theta = range_fraction * col.amax();
                for v in col.iter_mut() {
                    *v = nonlinear_transduction(*v, theta, slope);
                }
            }
            FaultSpec::MeanDrift {
                max_freq_hz,
                magnitude,
            } => {
                let target = magnitude.resolve(var);
                let drift = band_limited_drift(len, dt, max_freq_hz, target, &mut rng);
                for (v, d) in col.iter_mut().zip(drift) {
                    *v += d;
                }
            }
            FaultSpec::ExcessiveNoise { noise_variance } => {
                let sd = noise_variance.resolve(var).sqrt();
                for v in col.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sd * z;
                }
            }
        }
    }
    Ok(out)
}

/// Identity inside `[-theta, theta]`, slope `slope` outside.
pub fn nonlinear_transduction(y: f64, theta: f64, slope: f64) -> f64 {
    if y.abs() <= theta {
        y
    } else {
        y.signum() * (theta + slope * (y.abs() - theta))
    }
}

/// Sum of sinusoids with random phases, zero sample mean and sample standard
/// deviation `target_std`. Frequencies are drawn from the DFT grid of the
/// trace inside `(0, max_freq_hz]`, so every component completes a whole
/// number of cycles and no energy leaks above the band limit.
pub(crate) fn band_limited_drift(
    len: usize,
    dt: f64,
    max_freq_hz: f64,
    target_std: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let fundamental = 1.0 / (len as f64 * dt);
    let max_bin = (max_freq_hz / fundamental).floor() as usize;
    let mut drift = vec![0.0; len];
    for _ in 0..DRIFT_COMPONENTS {
        let freq = if max_bin >= 1 {
            fundamental * rng.random_range(1..=max_bin) as f64
        } else {
            max_freq_hz * (1.0 - rng.random::<f64>())
        };
        let phase = rng.random_range(0.0..(2.0 * PI));
        for (k, d) in drift.iter_mut().enumerate() {
            *d += (2.0 * PI * freq * k as f64 * dt + phase).sin();
        }
    }
    if len < 2 {
        return vec![0.0; len];
    }
    let mean = drift.iter().sum::<f64>() / len as f64;
    let sd = (drift.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (len - 1) as f64).sqrt();
    let scale = if sd > 0.0 { target_std / sd } else { 0.0 };
    drift.iter().map(|d| (d - mean) * scale).collect()
}
