//! Aggregation, parameter sweeps, paired method comparison and CSV output.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{param, Error, Result};

use super::config::ExperimentConfig;
use super::experiment::{Experiment, TrialMetrics};

/// Means over successful trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
    pub tests_used_mean: f64,
}

impl Aggregate {
    pub fn from_results(results: &[Result<TrialMetrics>]) -> Self {
        let ok: Vec<&TrialMetrics> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let k = ok.len();
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| {
            if k == 0 {
                f64::NAN
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / k as f64
            }
        };
        Self {
            trials: k,
            failures: results.len() - k,
            detection_rate: mean(&|m| m.detection_rate),
            false_alarm_rate: mean(&|m| m.false_alarm_rate),
            tests_used_mean: mean(&|m| m.tests_used as f64),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub axis_name: String,
    pub axis_value: String,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str =
    "method,axis_name,axis_value,trials,failures,detection_rate,false_alarm_rate,tests_used_mean";

/// Round to 6 significant digits and print the shortest exact form.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return "nan".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let a = &r.aggregate;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.axis_name,
                r.axis_value,
                a.trials,
                a.failures,
                format_sig6(a.detection_rate),
                format_sig6(a.false_alarm_rate),
                format_sig6(a.tests_used_mean)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn find(&self, method: &str, axis_value: &str) -> Option<&Aggregate> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.axis_value == axis_value)
            .map(|r| &r.aggregate)
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }
}

/// Parameter varied by [`run_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NumTests,
    Threshold,
    /// Sets both test error rates.
    Alpha,
    Prior,
    ModelOrder,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::NumTests => "num_tests",
            SweepAxis::Threshold => "threshold",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Prior => "prior",
            SweepAxis::ModelOrder => "model_order",
        }
    }

    /// Config key the axis writes to.
    fn key(&self) -> &'static [&'static str] {
        match self {
            SweepAxis::NumTests => &["tests"],
            SweepAxis::Threshold => &["kalman.threshold"],
            SweepAxis::Alpha => &["noise.alpha", "noise.beta"],
            SweepAxis::Prior => &["bgt.prior"],
            SweepAxis::ModelOrder => &["model.filter_order"],
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(&self, config: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = config.clone();
        for key in self.key() {
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::NumTests,
            SweepAxis::Threshold,
            SweepAxis::Alpha,
            SweepAxis::Prior,
            SweepAxis::ModelOrder,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Parse(format!("unknown sweep axis '{s}'")))
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Run every trial of `config` and summarize.
pub fn run_config(
    config: &ExperimentConfig,
    axis_name: &str,
    axis_value: &str,
) -> Result<ResultRow> {
    let exp = Experiment::prepare(config.clone())?;
    let results = exp.run_all();
    Ok(ResultRow {
        method: config.method.name().to_string(),
        axis_name: axis_name.to_string(),
        axis_value: axis_value.to_string(),
        aggregate: Aggregate::from_results(&results),
    })
}

/// One row per value, in the given order.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<ResultTable> {
    if values.is_empty() {
        return param("sweep needs at least one value");
    }
    if axis == SweepAxis::Threshold && config.mode != super::config::Mode::KalmanTests {
        return Err(Error::Configuration(
            "threshold sweeps need kalman_tests mode".into(),
        ));
    }
    let mut table = ResultTable::default();
    for v in values {
        let c = axis.apply(config, v)?;
        table.rows.push(run_config(&c, axis.name(), v)?);
    }
    Ok(table)
}

/// Settings every compared config must share so that trials are paired.
fn comparison_base(c: &ExperimentConfig) -> String {
    format!(
        "{:?}|{}|{}|{}|{:?}|{}|{}|{:?}|{:?}|{}",
        c.mode,
        c.num_sensors,
        c.d_min,
        c.d_max,
        c.fault,
        c.seed,
        c.trials,
        c.model,
        c.model_file,
        c.steps
    )
}

/// Run each config on the same fault placements (paired by trial index).
/// Rows follow the order of `configs`.
pub fn compare_methods(configs: &[ExperimentConfig]) -> Result<ResultTable> {
    let Some(first) = configs.first() else {
        return param("nothing to compare");
    };
    let base = comparison_base(first);
    if let Some(c) = configs.iter().find(|c| comparison_base(c) != base) {
        return param(format!(
            "config for {} does not share the comparison base (sensors, faults, seed, trials, model)",
            c.method
        ));
    }
    let mut table = ResultTable::default();
    for c in configs {
        table.rows.push(run_config(c, "method", c.method.name())?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(123456789.0), "123457000");
        assert_eq!(format_sig6(2.0 / 3.0), "0.666667");
    }

    #[test]
    fn aggregate_counts_failures() {
        let m = TrialMetrics {
            detection_rate: 1.0,
            false_alarm_rate: 0.5,
            tests_used: 4,
            seed: 0,
        };
        let results = vec![
            Ok(m),
            Err(Error::PoolTooSmall { size: 1 }),
            Ok(TrialMetrics {
                detection_rate: 0.0,
                ..m
            }),
        ];
        let a = Aggregate::from_results(&results);
        assert_eq!((a.trials, a.failures), (2, 1));
        assert_eq!(a.detection_rate, 0.5);
        assert_eq!(a.tests_used_mean, 4.0);
    }
}
