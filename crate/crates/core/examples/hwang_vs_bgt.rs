//! Paired comparison of adaptive splitting and Bayesian group testing on
//! 1000 sensors with 4 faults, with and without test errors.
//!
//! cargo run --release --example hwang_vs_bgt

use faultgt::harness::{compare_methods, ExperimentConfig};

fn main() -> faultgt::Result<()> {
    for rate in ["0", "0.05"] {
        let base = ExperimentConfig::from_text(&format!(
            "mode = boolean_tests\nsensors = 1000\nfaults.count = 4\ntrials = 50\nseed = 3\ntests = 90\n\
             hwang.variant = bisect\nnoise.alpha = {rate}\nnoise.beta = {rate}\nbgt.alpha = {rate}\nbgt.beta = {rate}\n"
        ))?;
        let configs: Vec<ExperimentConfig> = ["hwang", "bgt"]
            .iter()
            .map(|m| {
                let mut c = base.clone();
                c.set("method", m).map(|_| c)
            })
            .collect::<faultgt::Result<_>>()?;
        println!("error rate {rate}, budget 90");
        print!("{}", compare_methods(&configs)?.to_csv());
    }
    Ok(())
}
