//! Trains a wide two-layer ReLU network by stochastic particle gradient
//! descent on fresh samples from a four-neuron teacher, starting from a
//! small sphere of hidden units. The population loss is estimated on
//! held-out samples; the teacher itself attains zero.
//!
//! `cargo run --release --example relu_network_sgd [m] [steps]`

use meaflow::bench::{make_teacher_problem, population_loss};
use meaflow::flow::{run_with_source, BatchSource, InitScheme, IntegratorConfig, Method};
use meaflow::problems::Family;

fn main() -> meaflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let family = Family::ReluNetClassic { input_dim: 1 };

    for seed in 0..3u64 {
        let (teacher, spec) = make_teacher_problem(&family, 4, seed, 0.0, 256, 1.0)?;
        let config = IntegratorConfig {
            method: Method::Sgd { batch_size: 64 },
            max_steps: steps,
            tolerance: 0.0,
            snapshots: false,
            record_every: 1000,
            ..Default::default()
        };
        let scheme = InitScheme::SphereShell { m, r0: 0.1 };
        let out = run_with_source(&spec, &scheme, &config, seed, &BatchSource::Generator(&teacher))?;
        let loss = population_loss(&spec, &out.state.measure, &teacher, 4096)?;
        println!("seed {seed}: m = {m}, {steps} SGD steps, population loss {loss:.3e}");
        for (t, f) in out.state.energy_history.iter().step_by(5) {
            println!("    t = {t:>9.2}  batch objective {f:.3e}");
        }
    }
    Ok(())
}
