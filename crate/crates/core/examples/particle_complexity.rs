//! A desk-sized particle-complexity benchmark: particle flow against the
//! convex fixed-grid baseline for several particle counts. Reads a sweep
//! configuration (default: `configs/deconv_fig4a_quick.json`) and prints
//! geometric-mean excess losses.

use std::path::PathBuf;

use meaflow::bench::{particle_complexity_sweep, SweepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/deconv_fig4a_quick.json"));
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("output");
    }
    let config: SweepConfig = serde_json::from_value(value)?;
    let out = particle_complexity_sweep(&config)?;

    println!("{} on {} seeds", out.family, config.seeds.len());
    println!("{:<14} {:>5} {:>10} {:>16}", "method", "m", "certified", "geomean excess");
    for g in &out.summary {
        let excess = g.geometric_mean_excess.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!("{:<14} {:>5} {:>7}/{:<2} {:>16}", g.method.tag(), g.m, g.certified, g.runs, excess);
    }
    Ok(())
}
