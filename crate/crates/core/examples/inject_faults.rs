//! Inject each fault type into one sensor and compare against the clean column.
//!
//! cargo run --example inject_faults

use faultgt::faults::{inject, FaultSpec, FaultState};
use faultgt::lds::{generate_random_stable_model, simulate, InputMode, ModelParams};

fn main() -> faultgt::Result<()> {
    let model = generate_random_stable_model(&ModelParams::new(20, 18), 1)?;
    let (_, clean) = simulate(&model, 2000, InputMode::None, 2)?;
    let faulty = FaultState::from_support(18, &[4])?;
    for spec in [
        FaultSpec::default_spike(),
        FaultSpec::default_nonlinearity(),
        FaultSpec::default_mean_drift(),
        FaultSpec::default_excessive_noise(),
    ] {
        let bad = inject(&clean, &faulty, &spec, 3)?;
        let diff = bad.samples().column(4) - clean.samples().column(4);
        let rms = (diff.norm_squared() / diff.len() as f64).sqrt();
        let touched = diff.iter().filter(|d| d.abs() > 1e-12).count();
        let others_equal = (0..18)
            .filter(|&j| j != 4)
            .all(|j| bad.samples().column(j) == clean.samples().column(j));
        println!(
            "{:<16} rms change {rms:.4}, {touched} samples changed, other sensors untouched: {others_equal}",
            spec.kind_name()
        );
    }
    Ok(())
}
