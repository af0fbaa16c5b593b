use super::*;
use approx::assert_abs_diff_eq;

const DECONV: Family = Family::SparseDeconvolution { order: 7 };

fn zero_slice(m: usize) -> ParticleMeasure {
    ParticleMeasure::uniform((0..m).map(|i| vec![0.0, i as f64 / m as f64]).collect()).unwrap()
}

/// Cyclic coordinate descent on `c ↦ ‖Ac − y‖²_W / (2λ) + reg Σ|c_j|`
/// with the design built column by column from `Φ(1, θ_j)`.
fn lasso_by_coordinate_descent(spec: &ProblemSpec, grid: &ParticleMeasure, reg: f64) -> f64 {
    let lambda = spec.lambda();
    let w = spec.quad_weights();
    let y = spec.target();
    let cols: Vec<Vec<f64>> = grid
        .position_rows()
        .map(|u| {
            let mut u = u.to_vec();
            u[0] = 1.0;
            spec.phi(&u, 1.0).unwrap().values().to_vec()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(w.iter()).map(|((x, y), w)| w * x * y).sum::<f64>();
    let mut c = vec![0.0; cols.len()];
    let mut r: Vec<f64> = y.to_vec();
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for (j, col) in cols.iter().enumerate() {
            let h = dot(col, col) / lambda;
            let z = (dot(col, &r) + c[j] * dot(col, col)) / lambda;
            let next = z.signum() * (z.abs() - reg).max(0.0) / h;
            let delta = next - c[j];
            if delta != 0.0 {
                r.iter_mut().zip(col).for_each(|(ri, a)| *ri -= delta * a);
                c[j] = next;
            }
            change = change.max(delta.abs());
        }
        if change < 1e-15 {
            break;
        }
    }
    dot(&r, &r) / (2.0 * lambda) + reg * c.iter().map(|x| x.abs()).sum::<f64>()
}

#[test]
fn deconvolution_teacher_respects_separation_and_weights() {
    for seed in 0..20 {
        let t = make_teacher(&DECONV, 5, seed, 1e-3).unwrap();
        assert_eq!(t, make_teacher(&DECONV, 5, seed, 1e-3).unwrap());
        let spikes = t.spikes().unwrap();
        assert_eq!(spikes.len(), 5);
        for j in 0..5 {
            let wj = spikes.weight(j);
            assert!((WEIGHT_RANGE.0..=WEIGHT_RANGE.1).contains(&wj), "weight {wj}");
            for k in 0..j {
                let d = torus_distance(spikes.location(j)[0], spikes.location(k)[0]);
                assert!(d >= MIN_SEPARATION, "seed {seed}: separation {d}");
            }
        }
    }
    assert_ne!(make_teacher(&DECONV, 5, 0, 0.0).unwrap(), make_teacher(&DECONV, 5, 1, 0.0).unwrap());
}

#[test]
fn crowded_teacher_is_infeasible() {
    assert!(matches!(
        make_teacher(&DECONV, 11, 0, 0.0),
        Err(Error::InfeasibleSeparation { .. })
    ));
    assert!(make_teacher(&DECONV, 0, 0, 0.0).is_err());
    assert!(make_teacher(&DECONV, 3, 0, -1.0).is_err());
}

#[test]
fn noiseless_signal_is_the_filtered_spike_train() {
    let t = make_teacher(&DECONV, 3, 4, 0.0).unwrap();
    let y = t.render_signal(256).unwrap();
    let spikes = t.spikes().unwrap();
    for (k, yk) in y.iter().enumerate() {
        let x = k as f64 / 256.0;
        let expected: f64 = (0..3)
            .map(|j| spikes.weight(j) * deconv::kernel(7, x - spikes.location(j)[0]))
            .sum();
        assert_abs_diff_eq!(*yk, expected, epsilon = 1e-12);
    }
}

#[test]
fn sigmoid_teacher_draws_unit_features() {
    let t = make_teacher(&Family::SigmoidNet { input_dim: 3 }, 4, 2, 0.0).unwrap();
    let (x, y) = t.dataset(50, seeds::EVAL);
    assert_eq!(y.len(), 50);
    for row in x.chunks(3) {
        assert_abs_diff_eq!(crate::measures::norm(row), 1.0, epsilon = 1e-12);
    }
    assert_eq!(t.output(&x), y);
}

#[test]
fn teacher_has_zero_population_loss() {
    for family in [
        Family::ReluNetClassic { input_dim: 2 },
        Family::ReluNetSignedSquare { input_dim: 2 },
        Family::SigmoidNet { input_dim: 2 },
    ] {
        let (teacher, spec) = make_teacher_problem(&family, 4, 1, 0.0, 64, 1.0).unwrap();
        let loss = population_loss(&spec, &teacher.measure, &teacher, 512).unwrap();
        assert!(loss.abs() < 1e-24, "{family:?}: {loss}");
    }
}

#[test]
fn signed_square_teacher_matches_its_classic_form() {
    let classic = make_teacher(&Family::ReluNetClassic { input_dim: 2 }, 3, 8, 0.0).unwrap();
    let signed = make_teacher(&Family::ReluNetSignedSquare { input_dim: 2 }, 3, 8, 0.0).unwrap();
    let x = vec![0.3, -1.2, 0.7, 0.4, -0.2, -0.9, 1.5, 0.1];
    let a = classic.output(&x);
    let b = signed.output(&x);
    for (p, q) in a.iter().zip(&b) {
        assert_abs_diff_eq!(p, q, epsilon = 1e-12);
    }
}

#[test]
fn baseline_on_zero_signal_is_zero() {
    let spec = ProblemSpec::deconvolution(vec![0.0; 256], 7, 1.0).unwrap();
    let b = fixed_grid_baseline(&spec, &zero_slice(32), 1000).unwrap();
    assert_eq!(b.objective, 0.0);
    assert!(b.weights.iter().all(|c| *c == 0.0));
    assert!(b.converged);
    assert_eq!(b.measure, zero_slice(32));
}

#[test]
fn baseline_matches_coordinate_descent() {
    for (seed, lambda) in [(0u64, 1.0), (1, 0.3), (2, 3.0)] {
        let (_, spec) = make_teacher_problem(&DECONV, 4, seed, 1e-2, 256, lambda).unwrap();
        let grid = zero_slice(12);
        let b = fixed_grid_baseline(&spec, &grid, 200_000).unwrap();
        assert!(b.converged, "seed {seed}");
        let reference = lasso_by_coordinate_descent(&spec, &grid, spec.reg_weight());
        assert!((b.objective - reference).abs() <= 1e-8, "seed {seed}: {} vs {reference}", b.objective);
        assert_abs_diff_eq!(spec.objective(&b.measure).unwrap(), b.objective, epsilon = 1e-10);
    }
}

#[test]
fn network_baseline_matches_coordinate_descent() {
    let (_, spec) = make_teacher_problem(&Family::SigmoidNet { input_dim: 2 }, 3, 5, 0.05, 40, 1.0).unwrap();
    let spec = spec.with_regularizer(Regularizer::AbsWeight, 0.05).unwrap();
    let grid = ParticleMeasure::uniform(
        (0..10)
            .map(|j| {
                let a = j as f64 * 0.7;
                vec![0.0, a.cos(), a.sin(), 0.3 * (j as f64 - 4.5)]
            })
            .collect(),
    )
    .unwrap();
    let b = fixed_grid_baseline(&spec, &grid, 200_000).unwrap();
    let reference = lasso_by_coordinate_descent(&spec, &grid, 0.05);
    assert!((b.objective - reference).abs() <= 1e-8, "{} vs {reference}", b.objective);
    assert_abs_diff_eq!(spec.objective(&b.measure).unwrap(), b.objective, epsilon = 1e-10);
}

#[test]
fn baseline_rejects_mismatched_grid() {
    let spec = ProblemSpec::deconvolution(vec![0.0; 256], 7, 1.0).unwrap();
    let grid = ParticleMeasure::uniform(vec![vec![0.0, 0.1, 0.2]]).unwrap();
    assert!(matches!(fixed_grid_baseline(&spec, &grid, 10), Err(Error::Dimension(_))));
}

#[test]
fn zero_horizon_consistency_is_the_grid_discrepancy() {
    let (_, spec) = make_teacher_problem(&DECONV, 5, 0, 1e-3, 256, 3.0).unwrap();
    let points = consistency_sweep(&spec, &[5, 10, 20], 0.0, 1e-5, 0).unwrap();
    for p in points {
        assert_abs_diff_eq!(p.w2, nested_grid_discrepancy(p.m), epsilon = 1e-12);
    }
    assert_abs_diff_eq!(nested_grid_discrepancy(1), 14f64.sqrt() / 8.0);
}

#[test]
fn consistency_runs_are_reproducible() {
    let (_, spec) = make_teacher_problem(&DECONV, 5, 1, 1e-3, 256, 3.0).unwrap();
    let a = consistency_sweep(&spec, &[8], 1e-3, 1e-5, 0).unwrap();
    let b = consistency_sweep(&spec, &[8], 1e-3, 1e-5, 0).unwrap();
    assert_eq!(a, b);
    assert!(consistency_sweep(&spec, &[], 1.0, 1e-5, 0).is_err());
}

#[test]
fn geometric_mean_floors_small_values() {
    assert_eq!(geometric_mean(&[]), None);
    assert_abs_diff_eq!(geometric_mean(&[1e-2, 1e-4]).unwrap(), 1e-3, epsilon = 1e-15);
    assert_abs_diff_eq!(geometric_mean(&[0.0, 1.0]).unwrap(), EXCESS_FLOOR.sqrt(), epsilon = 1e-15);
}

fn small_sweep(certify: bool) -> SweepConfig {
    SweepConfig {
        problem: ProblemConfig {
            family: DECONV,
            loss: LossKind::Quadratic,
            lambda: 3.0,
            regularizer: None,
            reg_weight: 1.0,
            data: DataSource::Teacher {
                teacher_size: 3,
                noise: 1e-3,
                samples: 256,
            },
        },
        m_values: vec![4, 8],
        seeds: vec![0, 1],
        integrator: IntegratorConfig {
            max_steps: 2000,
            snapshots: false,
            record_every: 100,
            ..Default::default()
        },
        sphere_radius: 0.1,
        certificate_tolerance: 1e-3,
        baseline_max_iters: 20_000,
        eval_samples: 256,
        certify,
        record_wallclock: false,
    }
}

#[test]
fn sweep_records_and_files() {
    let out = particle_complexity_sweep(&small_sweep(true)).unwrap();
    assert_eq!(out.records.len(), 8);
    assert_eq!(out.family, DECONV.tag());
    for seed in [0, 1] {
        let excess: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.excess_loss.unwrap())
            .collect();
        assert!(excess.iter().all(|e| *e >= 0.0));
        assert!(excess.contains(&0.0));
    }
    assert!(out.records.iter().all(|r| r.wallclock_ms.is_none() && r.error.is_none()));
    let g = out.group(BenchMethod::FixedGrid, 8).unwrap();
    assert_eq!((g.runs, g.failures), (2, 0));

    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["family", "method", "m", "seed", "excess_loss", "wallclock_ms", "certified"]
    );
    assert_eq!(reader.records().count(), 8);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 4);

    assert_eq!(particle_complexity_sweep(&small_sweep(true)).unwrap(), out);
}

#[test]
fn sweep_validation() {
    let mut c = small_sweep(false);
    c.m_values = vec![];
    assert!(particle_complexity_sweep(&c).is_err());
    let mut c = small_sweep(false);
    c.seeds = vec![];
    assert!(c.validate().is_err());
    let mut c = small_sweep(false);
    c.problem.data = DataSource::Signal { values: vec![0.0; 16] };
    assert!(c.validate().is_err());
}

#[test]
fn network_sweep_reports_population_loss() {
    let mut c = small_sweep(false);
    c.problem.family = Family::ReluNetSignedSquare { input_dim: 1 };
    c.problem.lambda = 1.0;
    c.problem.data = DataSource::Teacher {
        teacher_size: 2,
        noise: 0.0,
        samples: 64,
    };
    c.integrator.method = Method::Sgd { batch_size: 16 };
    c.integrator.max_steps = 500;
    let out = particle_complexity_sweep(&c).unwrap();
    for r in &out.records {
        assert_eq!(r.excess_loss, r.value);
        assert!(r.value.unwrap() >= 0.0);
        assert!(!r.certified);
    }
}
