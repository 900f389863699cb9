//! Non-adaptive group testing: build a 2-disjunct design, simulate the
//! boolean outcomes of a fault state and decode it.
//!
//! cargo run --example cgt_decode

use faultgt::bgt::NoiseModel;
use faultgt::cgt::{
    boolean_apply, is_d_disjunct, likelihood_decode, min_distance_decode, search_disjunct_matrix,
    suggest_num_tests, FaultRegime,
};
use faultgt::faults::FaultState;

fn main() -> faultgt::Result<()> {
    let (n, d) = (18, 2);
    println!(
        "suggested tests: {} (random faults), {} (adversarial)",
        suggest_num_tests(n, d, FaultRegime::RandomFaults, 1.0)?,
        suggest_num_tests(n, d, FaultRegime::Adversarial, 1.0)?
    );
    let matrix = search_disjunct_matrix(16, n, d, 0.3, 1, 200)?;
    println!("16 x 18 design, 2-disjunct: {}", is_d_disjunct(&matrix, d)?);
    print!("{}", matrix.to_text());

    let truth = FaultState::from_support(n, &[2, 11])?;
    let mut z = boolean_apply(&matrix, &truth)?;
    println!(
        "truth {:?}, min-distance decode {:?}",
        truth.support(),
        min_distance_decode(&matrix, &z, d, 0)?.support()
    );

    z.z[0] = !z.z[0];
    let noise = NoiseModel::symmetric(0.05)?;
    let decoded = likelihood_decode(&matrix, &z, d, noise, &vec![0.9; n], 0)?;
    println!(
        "one flipped result, likelihood decode {:?}",
        decoded.support()
    );
    Ok(())
}
