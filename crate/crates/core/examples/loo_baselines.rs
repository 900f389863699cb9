//! Leave-one-out Kalman-filter detectors on a single faulty sensor.
//!
//! cargo run --release --example loo_baselines

use faultgt::baselines::{LooDetector, LooVariant};
use faultgt::faults::{inject, FaultSpec, FaultState};
use faultgt::kalman::{GroupTestConfig, GroupTester};
use faultgt::lds::{generate_random_stable_model, simulate, InputMode, ModelParams};

fn main() -> faultgt::Result<()> {
    let steps = 2000;
    let model = generate_random_stable_model(&ModelParams::new(20, 18), 1)?;
    let clean: Vec<_> = (0..40)
        .map(|s| simulate(&model, steps, InputMode::None, 100 + s).map(|r| r.1))
        .collect::<faultgt::Result<_>>()?;
    let tester = GroupTester::new(model.clone(), GroupTestConfig::for_trace_len(steps))?;
    let (_, trace) = simulate(&model, steps, InputMode::None, 9)?;
    let bad = inject(
        &trace,
        &FaultState::from_support(18, &[12])?,
        &FaultSpec::default_spike(),
        4,
    )?;
    for variant in [LooVariant::Kobayashi, LooVariant::Da] {
        let det = LooDetector::calibrate(&tester, &clean, variant, 0.99)?;
        println!(
            "{}: threshold {:.4}, clean -> {:?}, sensor 12 spiking -> {:?}",
            variant.name(),
            det.threshold,
            det.detect(&tester, &trace)?.support(),
            det.detect(&tester, &bad)?.support()
        );
    }
    Ok(())
}
