//! Monte-Carlo experiment orchestration.
//!
//! A config fixes the mode (Kalman-filter tests on simulated data, or
//! simulated boolean tests), the method and its parameters. Trials derive
//! their fault placements from the master seed and trial index only, so
//! different methods see the same faults. Results are aggregated per sweep
//! value and written as CSV.

mod config;
mod experiment;
mod sweep;

pub use config::{
    BgtDecoder, CgtDecoder, CgtDesign, ExperimentConfig, Method, Mode, KALMAN_SENSOR_LIMIT,
};
pub use experiment::{
    calibration_statistics, calibration_traces, simulate_boolean_test, Experiment, TrialMetrics,
};
pub use sweep::{
    compare_methods, format_sig6, run_config, run_sweep, Aggregate, ResultRow, ResultTable,
    SweepAxis, CSV_HEADER,
};

/// Convenience for a single trial of an unprepared config.
pub fn run_trial(config: &ExperimentConfig, trial_index: usize) -> crate::Result<TrialMetrics> {
    Experiment::prepare(config.clone())?.run_trial(trial_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgt::NoiseModel;
    use crate::faults::FaultState;

    #[test]
    fn boolean_test_flip_rates() {
        let truth = FaultState::from_support(10, &[0]).unwrap();
        let noise = NoiseModel::symmetric(0.05).unwrap();
        let mut flips = 0;
        let mut positives_clean = 0;
        for s in 0..100_000u64 {
            if !simulate_boolean_test(&[0, 3], &truth, noise, s).unwrap() {
                flips += 1;
            }
            if simulate_boolean_test(&[4, 5], &truth, noise, s + 1_000_000).unwrap() {
                positives_clean += 1;
            }
        }
        assert!((flips as f64 / 1e5 - 0.05).abs() < 0.005);
        assert!((positives_clean as f64 / 1e5 - 0.05).abs() < 0.005);
        for s in 0..100 {
            assert!(simulate_boolean_test(&[0], &truth, NoiseModel::noiseless(), s).unwrap());
            assert!(!simulate_boolean_test(&[1], &truth, NoiseModel::noiseless(), s).unwrap());
        }
    }

    fn boolean_config(method: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(&format!(
            "mode = boolean_tests\nmethod = {method}\nsensors = 18\nfaults.d_max = 2\ntests = 16\ntrials = 20\ncgt.design = disjunct\n"
        ))
        .unwrap()
    }

    #[test]
    fn disjunct_cgt_recovers_noiseless_states() {
        let exp = Experiment::prepare(boolean_config("cgt")).unwrap();
        for r in exp.run_all() {
            let m = r.unwrap();
            assert_eq!((m.detection_rate, m.false_alarm_rate), (1.0, 0.0));
        }
    }

    #[test]
    fn trials_are_deterministic_and_paired() {
        let cfg = boolean_config("bgt");
        assert_eq!(run_trial(&cfg, 3).unwrap(), run_trial(&cfg, 3).unwrap());
        let a = Experiment::prepare(cfg.clone()).unwrap();
        let b = Experiment::prepare(boolean_config("hwang")).unwrap();
        for i in 0..10 {
            assert_eq!(a.fault_state(i).unwrap(), b.fault_state(i).unwrap());
        }
    }

    #[test]
    fn identical_methods_give_identical_rows() {
        let cfg = boolean_config("bgt");
        let t = compare_methods(&[cfg.clone(), cfg]).unwrap();
        assert_eq!(t.rows[0].aggregate, t.rows[1].aggregate);
        let mut other = boolean_config("hwang");
        other.seed = 99;
        assert!(compare_methods(&[boolean_config("bgt"), other]).is_err());
    }

    #[test]
    fn kalman_mode_refused_for_large_networks() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("sensors", "500").unwrap();
        assert!(matches!(
            Experiment::prepare(cfg),
            Err(crate::Error::Configuration(_))
        ));
    }
}
