//! With too few particles the flow can stall at a non-optimal stationary
//! point. This example runs six particles on several teachers and shows
//! the certificate failing together with the sublevel set `{F' <= -eta}`
//! that an extra particle would have to reach.

use meaflow::bench::make_teacher_problem;
use meaflow::certificates::{certify, escape_set, CertGrid, DEFAULT_SUPPORT_THRESHOLD};
use meaflow::flow::{run, DtPolicy, InitScheme, IntegratorConfig};
use meaflow::problems::Family;

fn main() -> meaflow::Result<()> {
    let family = Family::SparseDeconvolution { order: 7 };
    let config = IntegratorConfig {
        dt: DtPolicy::Auto { safety: 1.0, refresh_every: 500 },
        max_steps: 2_000_000,
        snapshots: false,
        record_every: 10_000,
        ..Default::default()
    };
    println!("{:>4} {:>4} {:>12} {:>12} {:>6} {:>10}  verdict", "seed", "m", "grid_min", "F", "|K|", "escape");
    for seed in 0..4u64 {
        let (_, spec) = make_teacher_problem(&family, 5, seed, 1e-3, 256, 3.0)?;
        for m in [6, 10] {
            let out = run(&spec, &InitScheme::GridOnZeroSlice { m, half_width: 3.0 }, &config, seed)?;
            let mu = &out.state.measure;
            let grid = CertGrid::Torus { points: 1024 };
            let report = certify(&spec, mu, &grid, 1e-3, DEFAULT_SUPPORT_THRESHOLD)?;
            let diag = escape_set(&spec, mu, None, &grid)?;
            println!(
                "{seed:>4} {m:>4} {:>12.4e} {:>12.6} {:>6} {:>10.3}  {} / {:?}",
                report.grid_min,
                out.state.energy().unwrap_or(f64::NAN),
                diag.k_size,
                diag.escape_mass,
                report.verdict(),
                diag.verdict
            );
        }
    }
    Ok(())
}
