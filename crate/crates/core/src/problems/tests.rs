use super::*;
use crate::measures::ParticleMeasure;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn zero_deconv(lambda: f64) -> ProblemSpec {
    ProblemSpec::deconvolution(vec![0.0; 256], 7, lambda).unwrap()
}

fn spike_deconv(theta: f64, amplitude: f64, lambda: f64) -> ProblemSpec {
    let target = (0..256)
        .map(|k| amplitude * dirichlet_kernel(7, k as f64 / 256.0 - theta))
        .collect();
    ProblemSpec::deconvolution(target, 7, lambda).unwrap()
}

/// Two-dimensional inputs on a small fixed design.
fn toy_network(family: Family, loss: LossKind) -> ProblemSpec {
    let features = vec![0.5, -1.0, 1.5, 0.25, -0.75, 0.8, 0.1, 1.2, -1.3, -0.4];
    let labels = match loss {
        LossKind::Quadratic => vec![0.3, -0.2, 0.9, 0.1, -0.5],
        LossKind::Logistic => vec![1.0, -1.0, 1.0, 1.0, -1.0],
    };
    ProblemSpec::network(family, features, labels, loss).unwrap()
}

fn signed_measure(positions: Vec<Vec<f64>>, signs: Vec<i8>) -> ParticleMeasure {
    ParticleMeasure::uniform(positions).unwrap().with_signs(signs).unwrap()
}

#[test]
fn dirichlet_values_at_zero_and_half() {
    let spec = zero_deconv(1.0);
    let f = spec.phi(&[1.0, 0.0], 1.0).unwrap();
    assert_abs_diff_eq!(f.values()[0], 15.0, epsilon = 1e-12);
    assert_abs_diff_eq!(f.values()[128], -1.0, epsilon = 1e-12);
}

#[test]
fn sigmoid_at_zero_theta_is_half_weight() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic);
    let f = spec.phi(&[3.0, 0.0, 0.0, 0.0], 1.0).unwrap();
    for v in f.values() {
        assert_abs_diff_eq!(*v, 1.5, epsilon = 1e-15);
    }
    let d = spec.dphi(&[3.0, 0.0, 0.0, 0.0], 1.0).unwrap();
    let set = spec.samples().unwrap();
    for k in 0..set.len() {
        let z = [set.row(k)[0], set.row(k)[1], 1.0];
        assert_abs_diff_eq!(d[0].values()[k], 0.5, epsilon = 1e-15);
        for j in 0..3 {
            assert_abs_diff_eq!(d[j + 1].values()[k], 3.0 * 0.25 * z[j], epsilon = 1e-15);
        }
    }
}

#[test]
fn signed_square_derivative_on_positive_orthant() {
    let features = vec![0.5, 1.0, 1.5, 0.25];
    let spec = ProblemSpec::network(
        Family::ReluNetSignedSquare { input_dim: 2 },
        features,
        vec![0.0, 0.0],
        LossKind::Quadratic,
    )
    .unwrap();
    let theta = [0.7, 0.4, 0.9];
    let d = spec.dphi(&theta, 1.0).unwrap();
    let set = spec.samples().unwrap();
    let h = 1e-5;
    for k in 0..set.len() {
        let z = [set.row(k)[0], set.row(k)[1], 1.0];
        for i in 0..3 {
            assert_abs_diff_eq!(d[i].values()[k], 2.0 * theta[i] * z[i], epsilon = 1e-14);
            let mut up = theta;
            let mut down = theta;
            up[i] += h;
            down[i] -= h;
            let fd = (spec.phi(&up, 1.0).unwrap().values()[k] - spec.phi(&down, 1.0).unwrap().values()[k]) / (2.0 * h);
            assert_abs_diff_eq!(d[i].values()[k], fd, epsilon = 1e-8);
        }
    }
}

#[test]
fn deconvolution_weight_derivative_is_the_kernel() {
    let spec = zero_deconv(1.0);
    let d = spec.dphi(&[2.5, 0.3], 1.0).unwrap();
    let psi = spec.phi(&[1.0, 0.3], 1.0).unwrap();
    assert_eq!(d[0].values(), psi.values());
}

#[test]
fn classic_relu_kink_only_fails_for_derivatives() {
    let spec = toy_network(Family::ReluNetClassic { input_dim: 2 }, LossKind::Quadratic);
    let u = [1.0, 0.0, 0.0, 0.0];
    assert!(spec.phi(&u, 1.0).unwrap().values().iter().all(|v| *v == 0.0));
    assert!(matches!(spec.dphi(&u, 1.0), Err(Error::NonDifferentiable(_))));
    assert!(spec.dphi(&[0.0, 0.0, 0.0, 0.0], 1.0).is_ok());
}

#[test]
fn quadratic_loss_examples() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic);
    let y = spec.target().to_vec();
    let at_y = FunctionSample::new(y.clone(), spec.quad_weights()).unwrap();
    assert_eq!(spec.loss(&at_y).unwrap(), 0.0);
    assert!(spec.loss_grad(&at_y).unwrap().values().iter().all(|g| *g == 0.0));
    let shifted = FunctionSample::new(y.iter().map(|v| v + 2.0).collect(), spec.quad_weights()).unwrap();
    assert_abs_diff_eq!(spec.loss(&shifted).unwrap(), 2.0, epsilon = 1e-14);
}

#[test]
fn logistic_loss_at_zero_is_log_two() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Logistic);
    let zero = FunctionSample::new(vec![0.0; 5], spec.quad_weights()).unwrap();
    assert_abs_diff_eq!(spec.loss(&zero).unwrap(), 2f64.ln(), epsilon = 1e-15);
}

#[test]
fn mismatched_quadrature_is_a_shape_error() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic);
    let f = FunctionSample::new(vec![0.0; 3], vec![1.0 / 3.0; 3].into()).unwrap();
    assert!(matches!(spec.loss(&f), Err(Error::Shape { .. })));
}

#[test]
fn absolute_value_prox_and_correction() {
    assert_abs_diff_eq!(soft_threshold(1.0, 0.3), 0.7, epsilon = 1e-15);
    assert_eq!(soft_threshold(-0.2, 0.3), 0.0);
    let spec = zero_deconv(1.0);
    assert_eq!(spec.prox_reg(&[1.0, 0.42], 0.3)[1], 0.42);
    assert_eq!(spec.reg_minnorm_correction(&[0.0, 0.1], &[0.5, 0.7]), vec![0.0, 0.7]);
    assert_eq!(spec.reg_minnorm_correction(&[0.0, 0.1], &[2.0, 0.7]), vec![1.0, 0.7]);
    assert_eq!(spec.reg_minnorm_correction(&[0.0, 0.1], &[-3.0, 0.0]), vec![-2.0, 0.0]);
    assert_eq!(spec.reg_minnorm_correction(&[-4.0, 0.1], &[0.5, 0.0]), vec![1.5, 0.0]);
}

#[test]
fn squared_norm_prox_and_correction() {
    let spec = toy_network(Family::ReluNetSignedSquare { input_dim: 2 }, LossKind::Quadratic)
        .with_regularizer(Regularizer::SquaredNorm, 1.0)
        .unwrap();
    let u = [0.6, -0.3, 1.2];
    let p = spec.prox_reg(&u, 0.25);
    for (a, b) in p.iter().zip(&u) {
        assert_abs_diff_eq!(*a, b / 1.5, epsilon = 1e-15);
    }
    let c = spec.reg_minnorm_correction(&u, &[0.0; 3]);
    for (a, b) in c.iter().zip(&u) {
        assert_abs_diff_eq!(*a, -2.0 * b, epsilon = 1e-15);
    }
    assert_abs_diff_eq!(spec.reg_value(&u), 0.36 + 0.09 + 1.44, epsilon = 1e-14);
}

#[test]
fn unregularized_prox_is_identity() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic)
        .with_regularizer(Regularizer::None, 1.0)
        .unwrap();
    let u = [0.6, -0.3, 1.2, 0.0];
    assert_eq!(spec.prox_reg(&u, 10.0), u.to_vec());
    assert_eq!(spec.reg_minnorm_correction(&u, &[1.0; 4]), vec![1.0; 4]);
    assert_eq!(spec.reg_value(&u), 0.0);
}

#[test]
fn zero_signal_zero_weights_has_zero_objective() {
    let spec = zero_deconv(0.5);
    let mu = ParticleMeasure::uniform((0..8).map(|i| vec![0.0, i as f64 / 8.0]).collect()).unwrap();
    assert_eq!(spec.objective(&mu).unwrap(), 0.0);
}

#[test]
fn two_particle_objective_by_hand() {
    let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic)
        .with_lambda(0.5)
        .unwrap()
        .with_regularizer(Regularizer::AbsWeight, 1.0)
        .unwrap();
    let a = [1.3, 0.2, -0.4, 0.1];
    let b = [-0.7, -0.5, 0.3, 0.6];
    let mu = ParticleMeasure::uniform(vec![a.to_vec(), b.to_vec()]).unwrap();
    let set = spec.samples().unwrap();
    let mut expected = 0.0;
    for k in 0..set.len() {
        let x = set.row(k);
        let net = |u: &[f64]| u[0] * sigmoid(u[1] * x[0] + u[2] * x[1] + u[3]);
        let f = 0.5 * net(&a) + 0.5 * net(&b);
        expected += (f - set.labels[k]).powi(2) / set.len() as f64;
    }
    expected /= 2.0 * 0.5;
    expected += 0.5 * (1.3 + 0.7);
    assert_abs_diff_eq!(spec.objective(&mu).unwrap(), expected, epsilon = 1e-14);
}

#[test]
fn doubling_weights_doubles_embedding_and_regularizer() {
    let spec = zero_deconv(1.0);
    let mu = ParticleMeasure::uniform(vec![vec![0.8, 0.1], vec![-1.1, 0.6], vec![0.3, 0.9]]).unwrap();
    let doubled = ParticleMeasure::uniform(
        mu.position_rows().map(|u| vec![2.0 * u[0], u[1]]).collect(),
    )
    .unwrap();
    let f1 = spec.embed(&mu).unwrap();
    let f2 = spec.embed(&doubled).unwrap();
    for (a, b) in f1.values().iter().zip(f2.values()) {
        assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(2.0 * spec.reg_integral(&mu), spec.reg_integral(&doubled), epsilon = 1e-15);
}

#[test]
fn first_variation_at_zero_signal() {
    let spec = zero_deconv(1.0);
    let mu = ParticleMeasure::uniform(vec![vec![0.0, 0.2], vec![0.0, 0.7]]).unwrap();
    for theta in [0.0, 0.33, 0.9] {
        assert_abs_diff_eq!(spec.f_prime(&mu, &[2.0, theta], 1.0).unwrap(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.f_prime(&mu, &[-0.5, theta], 1.0).unwrap(), 0.5, epsilon = 1e-14);
    }
}

#[test]
fn first_variation_of_a_lone_spike() {
    let lambda = 2.0;
    let spec = spike_deconv(0.3, 1.0, lambda);
    let empty = ParticleMeasure::uniform(vec![vec![0.0, 0.0]]).unwrap();
    // ⟨y, ψ(· − 0.3)⟩ = ‖ψ‖² = 15
    assert_abs_diff_eq!(spec.f_prime(&empty, &[1.0, 0.3], 1.0).unwrap(), 1.0 - 15.0 / lambda, epsilon = 1e-10);
}

/// `(F(μ + εδ_u) − F(μ)) / ε`, Richardson-extrapolated over ε and ε/10.
fn gateaux(spec: &ProblemSpec, mu: &ParticleMeasure, u: &[f64], sign: i8) -> f64 {
    let base = spec.objective(mu).unwrap();
    let quotient = |eps: f64| {
        let mut positions: Vec<Vec<f64>> = mu.position_rows().map(<[f64]>::to_vec).collect();
        positions.push(u.to_vec());
        let mut masses = mu.masses().to_vec();
        masses.push(eps);
        let mut nu = ParticleMeasure::new(positions, masses).unwrap();
        if let Some(s) = mu.signs() {
            let mut s = s.to_vec();
            s.push(sign);
            nu = nu.with_signs(s).unwrap();
        }
        (spec.objective(&nu).unwrap() - base) / eps
    };
    let (a, b) = (quotient(1e-4), quotient(1e-5));
    (10.0 * b - a) / 9.0
}

#[test]
fn first_variation_is_the_gateaux_derivative() {
    let deconv = spike_deconv(0.4, 0.8, 0.7);
    let mu = ParticleMeasure::uniform(vec![vec![1.5, 0.38], vec![-0.4, 0.75]]).unwrap();
    let u = [0.9, 0.55];
    assert_abs_diff_eq!(deconv.f_prime(&mu, &u, 1.0).unwrap(), gateaux(&deconv, &mu, &u, 1), epsilon = 1e-6);

    let sig = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Logistic);
    let mu = ParticleMeasure::uniform(vec![vec![1.0, 0.3, -0.2, 0.5], vec![-0.6, 1.1, 0.4, -0.3]]).unwrap();
    let u = [0.7, -0.8, 0.2, 0.1];
    assert_abs_diff_eq!(sig.f_prime(&mu, &u, 1.0).unwrap(), gateaux(&sig, &mu, &u, 1), epsilon = 1e-6);

    let relu = toy_network(Family::ReluNetSignedSquare { input_dim: 2 }, LossKind::Quadratic);
    let mu = signed_measure(vec![vec![0.9, -0.4, 0.3], vec![0.2, 0.8, -0.6]], vec![1, -1]);
    let u = [-0.5, 0.6, 0.7];
    assert_abs_diff_eq!(relu.f_prime(&mu, &u, -1.0).unwrap(), gateaux(&relu, &mu, &u, -1), epsilon = 1e-6);
}

/// Central differences of `F_m` with respect to particle `i`, scaled by `−m`.
fn scaled_objective_gradient(spec: &ProblemSpec, mu: &ParticleMeasure, i: usize) -> Vec<f64> {
    let h = 1e-6;
    let m = mu.len() as f64;
    (0..mu.dim())
        .map(|j| {
            let shifted = |delta: f64| {
                let mut flat = mu.positions().to_vec();
                flat[i * mu.dim() + j] += delta;
                let mut nu = ParticleMeasure::from_flat(mu.dim(), flat, mu.masses().to_vec()).unwrap();
                if let Some(s) = mu.signs() {
                    nu = nu.with_signs(s.to_vec()).unwrap();
                }
                spec.objective(&nu).unwrap()
            };
            -m * (shifted(h) - shifted(-h)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn velocity_is_scaled_negative_gradient_of_particle_objective() {
    let cases: Vec<(ProblemSpec, ParticleMeasure)> = vec![
        (
            spike_deconv(0.6, 1.2, 0.9),
            ParticleMeasure::uniform(vec![vec![1.1, 0.57], vec![-0.3, 0.2], vec![0.6, 0.81]]).unwrap(),
        ),
        (
            toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic),
            ParticleMeasure::uniform(vec![vec![0.8, 0.3, -0.2, 0.5], vec![-0.6, 1.1, 0.4, -0.3]]).unwrap(),
        ),
        (
            toy_network(Family::ReluNetSignedSquare { input_dim: 2 }, LossKind::Quadratic),
            signed_measure(vec![vec![0.9, -0.4, 0.3], vec![0.2, 0.8, -0.6]], vec![1, -1]),
        ),
    ];
    for (spec, mu) in cases {
        let v = spec.velocity(&mu).unwrap();
        for i in 0..mu.len() {
            let fd = scaled_objective_gradient(&spec, &mu, i);
            let scale = fd.iter().fold(1e-2f64, |a, b| a.max(b.abs()));
            for (a, b) in v.get(i).iter().zip(&fd) {
                assert!((a - b).abs() / scale <= 1e-6, "{}: {a} vs {b}", spec.family().tag());
            }
        }
    }
}

#[test]
fn pinned_zero_weight_particle_has_zero_weight_velocity() {
    let spec = zero_deconv(1.0);
    let mu = ParticleMeasure::uniform(vec![vec![0.0, 0.1], vec![0.0, 0.6]]).unwrap();
    let v = spec.velocity(&mu).unwrap();
    assert_eq!(v.max_norm(), 0.0);
}

#[test]
fn velocity_depends_on_masses_only_through_the_embedding() {
    let spec = spike_deconv(0.2, 1.0, 1.0);
    let positions = vec![vec![0.9, 0.25], vec![0.4, 0.7]];
    let a = ParticleMeasure::new(positions.clone(), vec![0.5, 0.5]).unwrap();
    let b = ParticleMeasure::new(vec![positions[0].clone(), positions[1].clone(), positions[1].clone()], vec![0.5, 0.25, 0.25])
        .unwrap();
    let va = spec.velocity(&a).unwrap();
    let vb = spec.velocity(&b).unwrap();
    for (i, j) in [(0, 0), (1, 1), (1, 2)] {
        for (a, b) in va.get(i).iter().zip(vb.get(j)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn config_round_trip_and_strictness() {
    let spec = spike_deconv(0.2, 1.0, 0.25);
    let cfg = spec.to_config();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: ProblemConfig = serde_json::from_str(&json).unwrap();
    let rebuilt = back.build(0, std::path::Path::new(".")).unwrap();
    assert_eq!(rebuilt.target(), spec.target());
    assert_eq!(rebuilt.lambda(), 0.25);
    let bad = json.replacen('{', "{\"lamda\": 1.0, ", 1);
    assert!(serde_json::from_str::<ProblemConfig>(&bad).is_err());
}

#[test]
fn nonpositive_lambda_is_rejected() {
    assert!(ProblemSpec::deconvolution(vec![0.0; 64], 7, 0.0).is_err());
    assert!(zero_deconv(1.0).with_lambda(-1.0).is_err());
}

fn arb_deconv_measure() -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec((-3.0..3.0f64, 0.0..1.0f64), 1..6)
        .prop_map(|v| ParticleMeasure::uniform(v.into_iter().map(|(w, t)| vec![w, t]).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deconvolution_is_one_homogeneous_in_weight(w in -3.0..3.0f64, theta in 0.0..1.0f64, s in 0.1..4.0f64) {
        let spec = zero_deconv(1.0);
        let a = spec.phi(&[s * w, theta], 1.0).unwrap();
        let b = spec.phi(&[w, theta], 1.0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - s * y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        prop_assert!((spec.reg_value(&[s * w, theta]) - s * spec.reg_value(&[w, theta])).abs() <= 1e-14);
    }

    #[test]
    fn signed_square_is_two_homogeneous(
        t in prop::collection::vec(-2.0..2.0f64, 3),
        s in 0.1..3.0f64,
        sign in prop::sample::select(vec![-1.0, 1.0]),
    ) {
        let spec = toy_network(Family::ReluNetSignedSquare { input_dim: 2 }, LossKind::Quadratic)
            .with_regularizer(Regularizer::SquaredNorm, 1.0)
            .unwrap();
        let scaled: Vec<f64> = t.iter().map(|x| s * x).collect();
        let a = spec.phi(&scaled, sign).unwrap();
        let b = spec.phi(&t, sign).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - s * s * y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        prop_assert!((spec.reg_value(&scaled) - s * s * spec.reg_value(&t)).abs() <= 1e-12 * (1.0 + spec.reg_value(&scaled)));
    }

    #[test]
    fn first_variation_slices_are_one_homogeneous(mu in arb_deconv_measure(), w in 0.1..3.0f64, theta in 0.0..1.0f64, s in prop::sample::select(vec![0.5, 2.0])) {
        let spec = spike_deconv(0.35, 1.0, 0.8);
        let a = spec.f_prime(&mu, &[s * w, theta], 1.0).unwrap();
        let b = spec.f_prime(&mu, &[w, theta], 1.0).unwrap();
        prop_assert!((a - s * b).abs() <= 1e-10 * (1.0 + a.abs()));
        let a = spec.f_prime(&mu, &[-s * w, theta], 1.0).unwrap();
        let b = spec.f_prime(&mu, &[-w, theta], 1.0).unwrap();
        prop_assert!((a - s * b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn objective_is_convex_along_mixtures(mu in arb_deconv_measure(), nu in arb_deconv_measure()) {
        let spec = spike_deconv(0.6, 1.1, 0.5);
        let (fm, fn_) = (spec.objective(&mu).unwrap(), spec.objective(&nu).unwrap());
        for t in [0.25, 0.5, 0.75] {
            let mix = ParticleMeasure::mixture(&[(1.0 - t, &mu), (t, &nu)]).unwrap();
            let f = spec.objective(&mix).unwrap();
            prop_assert!(f <= (1.0 - t) * fm + t * fn_ + 1e-10 * (1.0 + fm.abs() + fn_.abs()));
        }
    }

    #[test]
    fn logistic_objective_is_convex_along_mixtures(
        a in prop::collection::vec(-2.0..2.0f64, 8),
        b in prop::collection::vec(-2.0..2.0f64, 8),
    ) {
        let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Logistic);
        let mu = ParticleMeasure::uniform_flat(4, a).unwrap();
        let nu = ParticleMeasure::uniform_flat(4, b).unwrap();
        let (fm, fn_) = (spec.objective(&mu).unwrap(), spec.objective(&nu).unwrap());
        for t in [0.25, 0.5, 0.75] {
            let mix = ParticleMeasure::mixture(&[(1.0 - t, &mu), (t, &nu)]).unwrap();
            prop_assert!(spec.objective(&mix).unwrap() <= (1.0 - t) * fm + t * fn_ + 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_is_bounded_by_the_loss(values in prop::collection::vec(-5.0..5.0f64, 5), lambda in 0.05..5.0f64) {
        let spec = toy_network(Family::SigmoidNet { input_dim: 2 }, LossKind::Quadratic).with_lambda(lambda).unwrap();
        let f = FunctionSample::new(values, spec.quad_weights()).unwrap();
        let g = spec.loss_grad(&f).unwrap();
        let r = spec.loss(&f).unwrap();
        prop_assert!(g.norm_squared() <= (2.0 / lambda) * r * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn prox_is_nonexpansive_in_weight(w1 in -5.0..5.0f64, w2 in -5.0..5.0f64, tau in 0.0..3.0f64) {
        let spec = zero_deconv(1.0);
        let p1 = spec.prox_reg(&[w1, 0.1], tau)[0];
        let p2 = spec.prox_reg(&[w2, 0.1], tau)[0];
        prop_assert!((p1 - p2).abs() <= (w1 - w2).abs() * (1.0 + 1e-15) + 1e-15);
    }

    #[test]
    fn inner_product_is_symmetric_and_psd(a in prop::collection::vec(-3.0..3.0f64, 6), b in prop::collection::vec(-3.0..3.0f64, 6)) {
        let q: std::sync::Arc<[f64]> = vec![1.0 / 6.0; 6].into();
        let f = FunctionSample::new(a, q.clone()).unwrap();
        let g = FunctionSample::new(b, q).unwrap();
        prop_assert_eq!(f.inner(&g).unwrap(), g.inner(&f).unwrap());
        prop_assert!(f.norm_squared() >= 0.0);
    }
}
