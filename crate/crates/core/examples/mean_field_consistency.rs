//! Many-particle consistency: flows from nested zero-slice grids with `m`
//! and `4m` particles are run to the same horizon, and the Wasserstein-2
//! distance between the terminal states is reported. At time 0 it equals
//! the grid discrepancy `sqrt(14)/(8m)`.

use meaflow::bench::{consistency_sweep, make_teacher_problem, nested_grid_discrepancy};
use meaflow::problems::Family;

fn main() -> meaflow::Result<()> {
    let horizon: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let (_, spec) = make_teacher_problem(&Family::SparseDeconvolution { order: 7 }, 5, 0, 1e-3, 256, 3.0)?;
    let m_values = [5, 10, 25];
    let at_zero = consistency_sweep(&spec, &m_values, 0.0, 1e-5, 0)?;
    let at_horizon = consistency_sweep(&spec, &m_values, horizon, 1e-5, 0)?;
    println!("{:>5} {:>14} {:>14} {:>14}", "m", "sqrt(14)/(8m)", "W2 at t=0", format!("W2 at t={horizon}"));
    for (a, b) in at_zero.iter().zip(&at_horizon) {
        println!("{:>5} {:>14.4e} {:>14.4e} {:>14.4e}", a.m, nested_grid_discrepancy(a.m), a.w2, b.w2);
    }
    Ok(())
}
