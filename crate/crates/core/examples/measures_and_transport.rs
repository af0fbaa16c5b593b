use meaflow::measures::{
    bl_distance_grid, h1_project, h2_project, total_variation_of_lift, w2_distance, BlGrid, ParticleMeasure,
};

fn main() -> meaflow::Result<()> {
    // Lifted measure on R x Theta: weights in the first coordinate.
    let lifted = ParticleMeasure::new(
        vec![vec![2.0, 0.3], vec![-1.0, 0.3], vec![0.5, 0.8]],
        vec![0.25, 0.25, 0.5],
    )?;
    let signed = h1_project(&lifted)?;
    println!("h1 projection:");
    for j in 0..signed.len() {
        println!("  {:+.3} at {:?}", signed.weight(j), signed.location(j));
    }
    println!(
        "integral of |w| = {:.3}, total variation of the projection = {:.3}",
        total_variation_of_lift(&lifted),
        signed.total_variation()
    );

    // 2-homogeneous projection onto the sphere.
    let mu = ParticleMeasure::uniform(vec![vec![3.0, 4.0], vec![0.0, -0.5]])?;
    let sphere = h2_project(&mu)?;
    for (u, q) in sphere.position_rows().zip(sphere.masses()) {
        println!("h2 atom {u:?} with mass {q:.4}");
    }

    // Transport and bounded-Lipschitz distances.
    let a = ParticleMeasure::uniform(vec![vec![0.0, 0.0], vec![1.0, 0.0]])?;
    let b = ParticleMeasure::uniform(vec![vec![0.0, 1.0], vec![1.0, 1.0]])?;
    println!("W2 between two translated pairs: {:.6}", w2_distance(&a, &b)?);
    let line = BlGrid::Line((0..=100).map(|k| k as f64 / 100.0).collect());
    let spike = |x: f64| h1_project(&ParticleMeasure::uniform(vec![vec![1.0, x]]).unwrap()).unwrap();
    println!(
        "BL estimate between unit spikes at 0.2 and 0.5: {:.4}",
        bl_distance_grid(&spike(0.2), &spike(0.5), &line)?
    );
    Ok(())
}
