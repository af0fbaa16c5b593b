//! Drives a run from a JSON configuration through the library API and
//! exports the trajectory, the same files `meaflow run` writes.
//!
//! `cargo run --release --example run_from_config -- configs/relu_fig3_m100.json out/relu`

use std::path::PathBuf;

use meaflow::bench::make_teacher;
use meaflow::certificates::{certify, CertGrid};
use meaflow::cli::RunConfig;
use meaflow::flow::{run_with_source, BatchSource, InitScheme, Method};
use meaflow::problems::DataSource;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/sigmoid_logistic.json"));
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("meaflow_example"));

    let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let seed = config.seed.unwrap_or(0);
    let base = path.parent().unwrap_or(std::path::Path::new("."));
    let spec = config.problem.build(seed, base)?;
    let scheme = config.init.clone().unwrap_or_else(|| InitScheme::canonical(spec.family(), 100));

    // Stochastic runs on teacher data draw fresh samples from the teacher.
    let teacher = match (&config.problem.data, config.integrator.method) {
        (DataSource::Teacher { teacher_size, noise, .. }, Method::Sgd { .. }) => {
            Some(make_teacher(&config.problem.family, *teacher_size, seed, *noise)?)
        }
        _ => None,
    };
    let source = teacher.as_ref().map_or(BatchSource::Dataset, |t| BatchSource::Generator(t));
    let out = run_with_source(&spec, &scheme, &config.integrator, seed, &source)?;
    out.export(&out_dir)?;

    let grid = config
        .certificate
        .grid
        .clone()
        .unwrap_or_else(|| CertGrid::default_for(&spec, &out.state.measure, seed));
    let report = certify(
        &spec,
        &out.state.measure,
        &grid,
        config.certificate.tolerance,
        config.certificate.support_threshold,
    )?;
    println!("{:?} after {} steps; {}", out.termination, out.state.step_index, report.summary_line());
    println!("trajectory written to {}", out_dir.display());
    Ok(())
}
