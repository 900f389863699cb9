//! Adaptive Bayesian group testing against simulated noisy boolean tests.
//!
//! cargo run --release --example bgt_session

use faultgt::bgt::{
    random_initial_pools, threshold_decode, BeliefState, BgtSession, NoiseModel, DEFAULT_SIGMA,
};
use faultgt::faults::FaultState;
use faultgt::harness::simulate_boolean_test;

fn main() -> faultgt::Result<()> {
    let n = 200;
    let truth = FaultState::from_support(n, &[17, 90, 151])?;
    let noise = NoiseModel::symmetric(0.05)?;
    let prior = BeliefState::default_prior(n, 4)?;
    let exploration = random_initial_pools(n, 10, 0.05, 1)?;
    let mut session = BgtSession::new(prior, noise, exploration, 2);
    for k in 0..80u64 {
        session.step(|pool| simulate_boolean_test(pool, &truth, noise, 1000 + k))?;
        if (k + 1) % 20 == 0 {
            let found = threshold_decode(session.belief(), DEFAULT_SIGMA);
            println!(
                "after {:>2} tests: declared faulty {:?}",
                session.tests_used(),
                found.support()
            );
        }
    }
    let mut suspects: Vec<(usize, f64)> = session
        .belief()
        .probabilities()
        .iter()
        .copied()
        .enumerate()
        .collect();
    suspects.sort_by(|a, b| a.1.total_cmp(&b.1));
    println!("least trusted sensors: {:?}", &suspects[..5]);
    println!("true faults: {:?}", truth.support());
    Ok(())
}
