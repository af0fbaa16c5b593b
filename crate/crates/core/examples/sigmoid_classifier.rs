//! Logistic-loss classification with a sigmoid network and an `|w|`
//! penalty, on a small inline dataset. Prints the training accuracy and
//! the certificate of the final measure.

use meaflow::certificates::{certify, CertGrid, DEFAULT_SUPPORT_THRESHOLD};
use meaflow::flow::{run, InitScheme, IntegratorConfig};
use meaflow::problems::{Family, LossKind, ProblemSpec, Regularizer};

fn main() -> meaflow::Result<()> {
    // Two interleaved arcs in the plane.
    let n = 40;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for k in 0..n {
        let t = std::f64::consts::PI * k as f64 / (n - 1) as f64;
        let (x, y, label) = if k % 2 == 0 {
            (t.cos(), t.sin() - 0.2, 1.0)
        } else {
            (1.0 - t.cos(), 0.3 - t.sin(), -1.0)
        };
        features.extend([x, y]);
        labels.push(label);
    }
    let spec = ProblemSpec::network(Family::SigmoidNet { input_dim: 2 }, features.clone(), labels.clone(), LossKind::Logistic)?
        .with_regularizer(Regularizer::AbsWeight, 1e-3)?;

    let config = IntegratorConfig {
        max_steps: 20_000,
        snapshots: false,
        record_every: 1000,
        ..Default::default()
    };
    let out = run(&spec, &InitScheme::GridOnZeroSlice { m: 50, half_width: 3.0 }, &config, 1)?;
    let f = spec.embed(&out.state.measure)?;
    let correct = f.values().iter().zip(&labels).filter(|(a, b)| a.signum() == b.signum()).count();
    println!(
        "{:?} after {} steps: objective {:.5}, training accuracy {correct}/{n}",
        out.termination,
        out.state.step_index,
        out.state.energy().unwrap_or(f64::NAN)
    );
    let grid = CertGrid::default_for(&spec, &out.state.measure, 1);
    let report = certify(&spec, &out.state.measure, &grid, 1e-3, DEFAULT_SUPPORT_THRESHOLD)?;
    println!("certificate {}\n  on {}", report.summary_line(), report.grid);
    Ok(())
}
