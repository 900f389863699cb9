//! Generate a random stable state-space model and simulate sensor outputs.
//!
//! cargo run --example simulate_model

use faultgt::lds::{generate_random_stable_model, simulate, InputMode, ModelParams};

fn main() -> faultgt::Result<()> {
    let model = generate_random_stable_model(&ModelParams::new(20, 18), 1)?;
    println!(
        "model: q = {}, N = {}, spectral radius {:.4}",
        model.state_dim(),
        model.num_sensors(),
        model.spectral_radius()
    );
    let (_, trace) = simulate(&model, 2000, InputMode::None, 2)?;
    let y = trace.samples();
    for i in 0..3 {
        let col = y.column(i);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        println!("sensor {i}: mean {mean:+.3}, variance {var:.3}");
    }
    let stationary = model.stationary_output_cov();
    println!("stationary variance of sensor 0: {:.3}", stationary[(0, 0)]);
    Ok(())
}
