//! Flat `key = value` experiment configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::HwangVariant;
use crate::bgt::{NoiseModel, DEFAULT_EPSILON, DEFAULT_MIN_SUBGROUP, DEFAULT_SIGMA};
use crate::error::{param, Error, Result};
use crate::faults::{Amount, FaultSpec};
use crate::kalman::StatisticKind;
use crate::lds::ModelParams;

/// Above this many sensors, Kalman-mode runs need `allow_large_kalman`.
pub const KALMAN_SENSOR_LIMIT: usize = 200;

/// Where group-test results come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Split each pool and compare two Kalman filters on simulated data.
    KalmanTests,
    /// Boolean OR of the true fault flags, flipped with the test error rates.
    BooleanTests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cgt,
    Bgt,
    KfBgt,
    Hwang,
    LooKobayashi,
    LooDa,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Cgt,
        Method::Bgt,
        Method::KfBgt,
        Method::Hwang,
        Method::LooKobayashi,
        Method::LooDa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cgt => "cgt",
            Method::Bgt => "bgt",
            Method::KfBgt => "kf_bgt",
            Method::Hwang => "hwang",
            Method::LooKobayashi => "loo_kobayashi",
            Method::LooDa => "loo_da",
        }
    }

    pub fn is_loo(&self) -> bool {
        matches!(self, Method::LooKobayashi | Method::LooDa)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalman_tests" => Ok(Mode::KalmanTests),
            "boolean_tests" => Ok(Mode::BooleanTests),
            other => Err(Error::Parse(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::KalmanTests => "kalman_tests",
            Mode::BooleanTests => "boolean_tests",
        })
    }
}

/// Non-adaptive design family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgtDesign {
    /// I.i.d. Bernoulli entries.
    Bernoulli,
    /// Random matrix verified `d`-disjunct.
    Disjunct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgtDecoder {
    MinDistance,
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgtDecoder {
    Threshold,
    Map,
}

/// Every experiment setting. Build with [`ExperimentConfig::default`] and
/// [`ExperimentConfig::set`], or parse a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub method: Method,
    pub num_sensors: usize,
    /// Test budget (rows for CGT, adaptive tests for BGT and Hwang).
    pub tests: usize,
    pub trials: usize,
    pub seed: u64,
    /// Error rates of simulated boolean tests.
    pub noise: NoiseModel,
    pub allow_large_kalman: bool,
    pub output: Option<PathBuf>,

    pub d_min: usize,
    pub d_max: usize,
    pub fault: FaultSpec,

    pub model: ModelParams,
    pub model_file: Option<PathBuf>,
    /// Reduced state dimension of the model used by the filters.
    pub filter_order: Option<usize>,
    pub steps: usize,

    pub threshold: Option<f64>,
    pub quantile: f64,
    pub calibration_traces: usize,
    pub calibration_samples: usize,
    pub statistic: StatisticKind,

    pub cgt_design: CgtDesign,
    pub cgt_density: f64,
    pub cgt_decoder: CgtDecoder,
    /// Sparsity bound used in decoding; defaults to `d_max`.
    pub cgt_d: Option<usize>,

    /// Error rates assumed by the Bayesian update; default to `noise`.
    pub bgt_alpha: Option<f64>,
    pub bgt_beta: Option<f64>,
    pub bgt_sigma: f64,
    /// Initial probability of being normal; defaults to `1 - d_max / N`.
    pub bgt_prior: Option<f64>,
    pub bgt_exploration_pools: usize,
    pub bgt_exploration_density: f64,
    pub bgt_epsilon: f64,
    pub bgt_stop_on_convergence: bool,
    pub bgt_min_subgroup: usize,
    pub bgt_decoder: BgtDecoder,

    pub hwang_variant: HwangVariant,
    /// Assumed defective count; defaults to `d_max`.
    pub hwang_d: Option<usize>,

    pub loo_quantile: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelParams::new(20, 18);
        Self {
            mode: Mode::KalmanTests,
            method: Method::Cgt,
            num_sensors: model.num_sensors,
            tests: 10,
            trials: 100,
            seed: 1,
            noise: NoiseModel::noiseless(),
            allow_large_kalman: false,
            output: None,
            d_min: 0,
            d_max: 2,
            fault: FaultSpec::default_spike(),
            model,
            model_file: None,
            filter_order: None,
            steps: 2000,
            threshold: None,
            quantile: 0.99,
            calibration_traces: 20,
            calibration_samples: 500,
            statistic: StatisticKind::MaxInfNorm,
            cgt_design: CgtDesign::Bernoulli,
            cgt_density: 0.5,
            cgt_decoder: CgtDecoder::MinDistance,
            cgt_d: None,
            bgt_alpha: None,
            bgt_beta: None,
            bgt_sigma: DEFAULT_SIGMA,
            bgt_prior: None,
            bgt_exploration_pools: 0,
            bgt_exploration_density: 0.5,
            bgt_epsilon: DEFAULT_EPSILON,
            bgt_stop_on_convergence: false,
            bgt_min_subgroup: DEFAULT_MIN_SUBGROUP,
            bgt_decoder: BgtDecoder::Threshold,
            hwang_variant: HwangVariant::RandomRegeneration,
            hwang_d: None,
            loo_quantile: 0.99,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("{key} = '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!(
            "{key} = '{value}': expected true or false"
        ))),
    }
}

fn opt(value: &str) -> Option<&str> {
    match value {
        "" | "none" | "auto" => None,
        v => Some(v),
    }
}

impl ExperimentConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown keys fail.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Apply one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = parse(key, value)?,
            "method" => self.method = parse(key, value)?,
            "sensors" => {
                self.num_sensors = parse(key, value)?;
                self.model.num_sensors = self.num_sensors;
            }
            "tests" => self.tests = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "noise.alpha" => self.noise.alpha = parse(key, value)?,
            "noise.beta" => self.noise.beta = parse(key, value)?,
            "noise.rate" => {
                let r = parse(key, value)?;
                self.noise = NoiseModel { alpha: r, beta: r };
            }
            "allow_large_kalman" => self.allow_large_kalman = parse_bool(key, value)?,
            "output" => self.output = opt(value).map(PathBuf::from),

            "faults.d_min" => self.d_min = parse(key, value)?,
            "faults.d_max" => self.d_max = parse(key, value)?,
            "faults.count" => {
                self.d_max = parse(key, value)?;
                self.d_min = self.d_max;
            }
            "faults.kind" => self.fault = FaultSpec::default_for_kind(value)?,
            "faults.rate" => match &mut self.fault {
                FaultSpec::Spike { rate, .. } => *rate = parse(key, value)?,
                _ => return param(format!("{key} applies to spike faults")),
            },
            "faults.amplitude" => match &mut self.fault {
                FaultSpec::Spike { mean_amplitude, .. } => {
                    *mean_amplitude = parse::<Amount>(key, value)?
                }
                _ => return param(format!("{key} applies to spike faults")),
            },
            "faults.range_fraction" => match &mut self.fault {
                FaultSpec::Nonlinearity { range_fraction, .. } => {
                    *range_fraction = parse(key, value)?
                }
                _ => return param(format!("{key} applies to nonlinearity faults")),
            },
            "faults.slope" => match &mut self.fault {
                FaultSpec::Nonlinearity { slope, .. } => *slope = parse(key, value)?,
                _ => return param(format!("{key} applies to nonlinearity faults")),
            },
            "faults.max_freq_hz" => match &mut self.fault {
                FaultSpec::MeanDrift { max_freq_hz, .. } => *max_freq_hz = parse(key, value)?,
                _ => return param(format!("{key} applies to mean_drift faults")),
            },
            "faults.magnitude" => match &mut self.fault {
                FaultSpec::MeanDrift { magnitude, .. } => *magnitude = parse::<Amount>(key, value)?,
                _ => return param(format!("{key} applies to mean_drift faults")),
            },
            "faults.noise_variance" => match &mut self.fault {
                FaultSpec::ExcessiveNoise { noise_variance } => {
                    *noise_variance = parse::<Amount>(key, value)?
                }
                _ => return param(format!("{key} applies to excessive_noise faults")),
            },

            "model.state_dim" => self.model.state_dim = parse(key, value)?,
            "model.spectral_radius" => self.model.spectral_radius = parse(key, value)?,
            "model.process_noise" => self.model.process_noise = parse(key, value)?,
            "model.measurement_noise" => self.model.measurement_noise = parse(key, value)?,
            "model.input_dim" => self.model.input_dim = parse(key, value)?,
            "model.file" => self.model_file = opt(value).map(PathBuf::from),
            "model.filter_order" => {
                self.filter_order = opt(value).map(|v| parse(key, v)).transpose()?
            }
            "model.steps" => self.steps = parse(key, value)?,

            "kalman.threshold" => self.threshold = opt(value).map(|v| parse(key, v)).transpose()?,
            "kalman.quantile" => self.quantile = parse(key, value)?,
            "kalman.calibration_traces" => self.calibration_traces = parse(key, value)?,
            "kalman.calibration_samples" => self.calibration_samples = parse(key, value)?,
            "kalman.statistic" => {
                self.statistic = match value {
                    "max" => StatisticKind::MaxInfNorm,
                    "mean" => StatisticKind::MeanInfNorm,
                    _ => {
                        return Err(Error::Parse(format!(
                            "{key} = '{value}': expected max or mean"
                        )))
                    }
                }
            }

            "cgt.design" => {
                self.cgt_design = match value {
                    "bernoulli" => CgtDesign::Bernoulli,
                    "disjunct" => CgtDesign::Disjunct,
                    _ => {
                        return Err(Error::Parse(format!(
                            "{key} = '{value}': expected bernoulli or disjunct"
                        )))
                    }
                }
            }
            "cgt.density" => self.cgt_density = parse(key, value)?,
            "cgt.decoder" => {
                self.cgt_decoder = match value {
                    "min_distance" => CgtDecoder::MinDistance,
                    "likelihood" => CgtDecoder::Likelihood,
                    _ => {
                        return Err(Error::Parse(format!(
                            "{key} = '{value}': expected min_distance or likelihood"
                        )))
                    }
                }
            }
            "cgt.d" => self.cgt_d = opt(value).map(|v| parse(key, v)).transpose()?,

            "bgt.alpha" => self.bgt_alpha = opt(value).map(|v| parse(key, v)).transpose()?,
            "bgt.beta" => self.bgt_beta = opt(value).map(|v| parse(key, v)).transpose()?,
            "bgt.sigma" => self.bgt_sigma = parse(key, value)?,
            "bgt.prior" => self.bgt_prior = opt(value).map(|v| parse(key, v)).transpose()?,
            "bgt.exploration_pools" => self.bgt_exploration_pools = parse(key, value)?,
            "bgt.exploration_density" => self.bgt_exploration_density = parse(key, value)?,
            "bgt.epsilon" => self.bgt_epsilon = parse(key, value)?,
            "bgt.stop_on_convergence" => self.bgt_stop_on_convergence = parse_bool(key, value)?,
            "bgt.min_subgroup" => self.bgt_min_subgroup = parse(key, value)?,
            "bgt.decoder" => {
                self.bgt_decoder = match value {
                    "threshold" => BgtDecoder::Threshold,
                    "map" => BgtDecoder::Map,
                    _ => {
                        return Err(Error::Parse(format!(
                            "{key} = '{value}': expected threshold or map"
                        )))
                    }
                }
            }

            "hwang.variant" => self.hwang_variant = HwangVariant::parse(value)?,
            "hwang.d" => self.hwang_d = opt(value).map(|v| parse(key, v)).transpose()?,

            "loo.quantile" => self.loo_quantile = parse(key, value)?,
            _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Error rates assumed by BGT.
    pub fn bgt_noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(
            self.bgt_alpha.unwrap_or(self.noise.alpha),
            self.bgt_beta.unwrap_or(self.noise.beta),
        )
    }

    pub fn bgt_prior_value(&self) -> f64 {
        self.bgt_prior
            .unwrap_or(1.0 - self.d_max as f64 / self.num_sensors as f64)
    }

    pub fn decode_sparsity(&self) -> usize {
        self.cgt_d.unwrap_or(self.d_max)
    }

    pub fn hwang_defectives(&self) -> usize {
        self.hwang_d.unwrap_or(self.d_max).max(1)
    }

    /// Check ranges and mode/method compatibility.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_sensors;
        if n < 2 {
            return param("sensors must be at least 2");
        }
        if self.model.num_sensors != n {
            return param("model sensor count differs from 'sensors'");
        }
        if self.d_min > self.d_max || self.d_max > n {
            return param(format!(
                "need faults.d_min <= faults.d_max <= sensors (got {}, {}, {n})",
                self.d_min, self.d_max
            ));
        }
        if self.trials == 0 {
            return param("trials must be positive");
        }
        NoiseModel::new(self.noise.alpha, self.noise.beta)?;
        self.bgt_noise()?;
        self.fault.validate()?;
        if !(self.quantile > 0.0 && self.quantile <= 1.0)
            || !(self.loo_quantile > 0.0 && self.loo_quantile <= 1.0)
        {
            return param("quantiles must lie in (0, 1]");
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return param("kalman.threshold must be positive");
            }
        }
        if !(self.cgt_density > 0.0 && self.cgt_density < 1.0) {
            return param("cgt.density must lie in (0, 1)");
        }
        let prior = self.bgt_prior_value();
        if !(0.0..=1.0).contains(&prior) {
            return param(format!("bgt.prior {prior} outside [0, 1]"));
        }
        if !(self.bgt_sigma >= 0.0 && self.bgt_sigma <= 1.0) {
            return param("bgt.sigma must lie in [0, 1]");
        }
        if !(self.bgt_epsilon > 0.0) {
            return param("bgt.epsilon must be positive");
        }
        if self.method.is_loo() && self.mode != Mode::KalmanTests {
            return Err(Error::Configuration(format!(
                "{} needs kalman_tests mode",
                self.method
            )));
        }
        if self.method == Method::KfBgt && self.mode != Mode::KalmanTests {
            return Err(Error::Configuration(
                "kf_bgt needs kalman_tests mode".into(),
            ));
        }
        if self.mode == Mode::KalmanTests {
            if n > KALMAN_SENSOR_LIMIT && !self.allow_large_kalman {
                return Err(Error::Configuration(format!(
                    "kalman_tests with {n} sensors; use boolean_tests or set allow_large_kalman = true"
                )));
            }
            if self.steps < 2 {
                return param("model.steps must be at least 2");
            }
            if self.calibration_traces == 0 || self.calibration_samples < 50 {
                return param("calibration needs at least one trace and 50 samples");
            }
            if let Some(order) = self.filter_order {
                if order == 0 || order > self.model.state_dim {
                    return param(format!(
                        "model.filter_order {order} outside 1..={}",
                        self.model.state_dim
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical text form, accepted by [`ExperimentConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let o = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        kv("mode", self.mode.to_string());
        kv("method", self.method.to_string());
        kv("sensors", self.num_sensors.to_string());
        kv("tests", self.tests.to_string());
        kv("trials", self.trials.to_string());
        kv("seed", self.seed.to_string());
        kv("noise.alpha", self.noise.alpha.to_string());
        kv("noise.beta", self.noise.beta.to_string());
        kv("allow_large_kalman", self.allow_large_kalman.to_string());
        kv(
            "output",
            o(self.output.as_ref().map(|p| p.display().to_string())),
        );
        kv("faults.d_min", self.d_min.to_string());
        kv("faults.d_max", self.d_max.to_string());
        kv("faults.kind", self.fault.kind_name().to_string());
        match self.fault {
            FaultSpec::Spike {
                rate,
                mean_amplitude,
            } => {
                kv("faults.rate", rate.to_string());
                kv("faults.amplitude", mean_amplitude.to_string());
            }
            FaultSpec::Nonlinearity {
                range_fraction,
                slope,
            } => {
                kv("faults.range_fraction", range_fraction.to_string());
                kv("faults.slope", slope.to_string());
            }
            FaultSpec::MeanDrift {
                max_freq_hz,
                magnitude,
            } => {
                kv("faults.max_freq_hz", max_freq_hz.to_string());
                kv("faults.magnitude", magnitude.to_string());
            }
            FaultSpec::ExcessiveNoise { noise_variance } => {
                kv("faults.noise_variance", noise_variance.to_string());
            }
        }
        kv("model.state_dim", self.model.state_dim.to_string());
        kv(
            "model.spectral_radius",
            self.model.spectral_radius.to_string(),
        );
        kv("model.process_noise", self.model.process_noise.to_string());
        kv(
            "model.measurement_noise",
            self.model.measurement_noise.to_string(),
        );
        kv("model.input_dim", self.model.input_dim.to_string());
        kv(
            "model.file",
            o(self.model_file.as_ref().map(|p| p.display().to_string())),
        );
        kv(
            "model.filter_order",
            o(self.filter_order.map(|v| v.to_string())),
        );
        kv("model.steps", self.steps.to_string());
        kv("kalman.threshold", o(self.threshold.map(|v| v.to_string())));
        kv("kalman.quantile", self.quantile.to_string());
        kv(
            "kalman.calibration_traces",
            self.calibration_traces.to_string(),
        );
        kv(
            "kalman.calibration_samples",
            self.calibration_samples.to_string(),
        );
        kv(
            "kalman.statistic",
            match self.statistic {
                StatisticKind::MaxInfNorm => "max",
                StatisticKind::MeanInfNorm => "mean",
            }
            .into(),
        );
        kv(
            "cgt.design",
            match self.cgt_design {
                CgtDesign::Bernoulli => "bernoulli",
                CgtDesign::Disjunct => "disjunct",
            }
            .into(),
        );
        kv("cgt.density", self.cgt_density.to_string());
        kv(
            "cgt.decoder",
            match self.cgt_decoder {
                CgtDecoder::MinDistance => "min_distance",
                CgtDecoder::Likelihood => "likelihood",
            }
            .into(),
        );
        kv("cgt.d", o(self.cgt_d.map(|v| v.to_string())));
        kv("bgt.alpha", o(self.bgt_alpha.map(|v| v.to_string())));
        kv("bgt.beta", o(self.bgt_beta.map(|v| v.to_string())));
        kv("bgt.sigma", self.bgt_sigma.to_string());
        kv("bgt.prior", o(self.bgt_prior.map(|v| v.to_string())));
        kv(
            "bgt.exploration_pools",
            self.bgt_exploration_pools.to_string(),
        );
        kv(
            "bgt.exploration_density",
            self.bgt_exploration_density.to_string(),
        );
        kv("bgt.epsilon", self.bgt_epsilon.to_string());
        kv(
            "bgt.stop_on_convergence",
            self.bgt_stop_on_convergence.to_string(),
        );
        kv("bgt.min_subgroup", self.bgt_min_subgroup.to_string());
        kv(
            "bgt.decoder",
            match self.bgt_decoder {
                BgtDecoder::Threshold => "threshold",
                BgtDecoder::Map => "map",
            }
            .into(),
        );
        kv("hwang.variant", self.hwang_variant.name().into());
        kv("hwang.d", o(self.hwang_d.map(|v| v.to_string())));
        kv("loo.quantile", self.loo_quantile.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "\
# boolean study
mode = boolean_tests
method = bgt
sensors = 1000
faults.count = 4
noise.rate = 0.05
bgt.exploration_pools = 25
bgt.prior = 0.9
faults.kind = spike
faults.amplitude = 2*std
";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.mode, Mode::BooleanTests);
        assert_eq!((cfg.d_min, cfg.d_max), (4, 4));
        assert_eq!(
            cfg.noise,
            NoiseModel {
                alpha: 0.05,
                beta: 0.05
            }
        );
        assert_eq!(cfg.bgt_noise().unwrap(), cfg.noise);
        assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_combinations() {
        assert!(ExperimentConfig::from_text("bgt.alpah = 0.1").is_err());
        assert!(ExperimentConfig::from_text("mode = boolean_tests\nmethod = loo_da").is_err());
        assert!(ExperimentConfig::from_text("sensors = 500").is_err());
        assert!(ExperimentConfig::from_text("sensors = 500\nallow_large_kalman = true").is_ok());
        assert!(ExperimentConfig::from_text("faults.kind = spike\nfaults.slope = 0.3").is_err());
    }

    #[test]
    fn default_prior_follows_fault_bound() {
        let cfg = ExperimentConfig::from_text("sensors = 18\nfaults.d_max = 2").unwrap();
        assert!((cfg.bgt_prior_value() - 16.0 / 18.0).abs() < 1e-15);
    }
}
