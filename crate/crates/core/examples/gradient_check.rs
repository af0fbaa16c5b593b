//! Finite-difference validation of the analytic gradients for every
//! problem family at 100 random differentiable points.

use meaflow::bench::make_teacher_problem;
use meaflow::certificates::{finite_difference_check, sample_measure, sample_probes};
use meaflow::problems::Family;

fn main() -> meaflow::Result<()> {
    let families = [
        Family::SparseDeconvolution { order: 7 },
        Family::SigmoidNet { input_dim: 3 },
        Family::ReluNetSignedSquare { input_dim: 3 },
        Family::ReluNetClassic { input_dim: 3 },
    ];
    for (seed, family) in families.iter().enumerate() {
        let seed = seed as u64;
        let (_, spec) = make_teacher_problem(family, 4, seed, 0.05, 64, 1.0)?;
        let mu = sample_measure(&spec, 10, seed)?;
        let report = finite_difference_check(&spec, &mu, &sample_probes(&spec, 100, seed))?;
        println!(
            "{:<24} F' gradient {:.2e}   velocity {:.2e}",
            family.tag(),
            report.max_rel_error_fprime,
            report.max_rel_error_velocity
        );
    }
    Ok(())
}
