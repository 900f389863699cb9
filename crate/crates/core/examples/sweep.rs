//! Sweep the number of non-adaptive tests in Kalman mode and print the CSV.
//!
//! cargo run --release --example sweep

use faultgt::harness::{run_sweep, ExperimentConfig, SweepAxis};

fn main() -> faultgt::Result<()> {
    let config = ExperimentConfig::from_text(
        "mode = kalman_tests\nmethod = cgt\nsensors = 18\nfaults.d_min = 1\nfaults.d_max = 2\ntrials = 30\nseed = 5\n",
    )?;
    let values: Vec<String> = ["6", "10", "14"].map(String::from).to_vec();
    print!(
        "{}",
        run_sweep(&config, SweepAxis::NumTests, &values)?.to_csv()
    );
    Ok(())
}
