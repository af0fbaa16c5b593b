//! Experiment harnesses: random teachers, the fixed-grid convex baseline,
//! the particle-complexity sweep and the many-particle consistency sweep.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{certify, CertGrid, DEFAULT_SUPPORT_THRESHOLD};
use crate::error::{Error, Result};
use crate::flow::{run_from, initial_measure, BatchSource, DtPolicy, InitScheme, IntegratorConfig, Method, SampleGenerator};
use crate::measures::{h1_project, w2_distance, ParticleMeasure, SignedAtomicMeasure};
use crate::problems::{
    deconv, network, pointwise_loss, pointwise_loss_derivative, DataSource, Family, LossKind, ProblemConfig,
    ProblemSpec, Regularizer, SampleSet,
};
use crate::seeds;

pub const MIN_SEPARATION: f64 = 0.1;
pub const MAX_REJECTIONS: usize = 100_000;
pub const WEIGHT_RANGE: (f64, f64) = (0.5, 1.5);
pub const BASELINE_TOLERANCE: f64 = 1e-10;
pub const MAX_HALVINGS: usize = 30;
/// Excess losses below this are clamped before taking geometric means.
pub const EXCESS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDistribution {
    /// Standard normal in `ℝ^p`.
    Gaussian,
    /// Uniform on the unit sphere of `ℝ^p`.
    UnitSphere,
}

/// Ground truth for synthetic experiments.
///
/// For deconvolution the atoms are spikes `(m₀ w_j, θ_j)` with mass `1/m₀`,
/// so `h1` of the measure is `Σ w_j δ_{θ_j}`. For networks the atoms are
/// the teacher's neurons in the family's own parameterization, each with
/// mass `1/m₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub family: Family,
    pub measure: ParticleMeasure,
    pub noise: f64,
    pub seed: u64,
    pub features: Option<FeatureDistribution>,
}

fn torus_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Random teacher: separated spikes with weights in `[0.5, 1.5]` for
/// deconvolution, a network with standard normal parameters otherwise.
pub fn make_teacher(family: &Family, m0: usize, seed: u64, noise: f64) -> Result<TeacherModel> {
    if m0 == 0 {
        return Err(Error::Config("teacher needs at least one atom".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::Config(format!("noise level must be nonnegative, got {noise}")));
    }
    let mut rng = seeds::stream(seed, seeds::TEACHER);
    let (measure, features) = match family {
        Family::SparseDeconvolution { .. } => {
            let mut attempts = 0;
            let thetas = loop {
                if attempts >= MAX_REJECTIONS {
                    return Err(Error::InfeasibleSeparation { attempts });
                }
                attempts += 1;
                let t: Vec<f64> = (0..m0).map(|_| rng.random::<f64>()).collect();
                let separated = (0..m0).all(|i| (0..i).all(|j| torus_distance(t[i], t[j]) >= MIN_SEPARATION));
                if separated {
                    break t;
                }
            };
            let positions = thetas
                .iter()
                .map(|t| vec![m0 as f64 * rng.random_range(WEIGHT_RANGE.0..=WEIGHT_RANGE.1), *t])
                .collect();
            (ParticleMeasure::uniform(positions)?, None)
        }
        Family::SigmoidNet { input_dim } => {
            let positions = (0..m0)
                .map(|_| (0..input_dim + 2).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            (ParticleMeasure::uniform(positions)?, Some(FeatureDistribution::UnitSphere))
        }
        Family::ReluNetClassic { input_dim } | Family::ReluNetSignedSquare { input_dim } => {
            let classic: Vec<Vec<f64>> = (0..m0)
                .map(|_| (0..input_dim + 2).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let measure = if family.uses_signs() {
                // w relu(θ·z) = sign(w) relu(s(ϑ)·z) with s(ϑ) = |w| θ
                let positions = classic
                    .iter()
                    .map(|u| {
                        u[1..]
                            .iter()
                            .map(|t| {
                                let a = u[0].abs() * t;
                                a.signum() * a.abs().sqrt()
                            })
                            .collect()
                    })
                    .collect();
                let signs = classic.iter().map(|u| if u[0] >= 0.0 { 1 } else { -1 }).collect();
                ParticleMeasure::uniform(positions)?.with_signs(signs)?
            } else {
                ParticleMeasure::uniform(classic)?
            };
            (measure, Some(FeatureDistribution::Gaussian))
        }
    };
    Ok(TeacherModel {
        family: family.clone(),
        measure,
        noise,
        seed,
        features,
    })
}

impl TeacherModel {
    /// The spikes `Σ w_j δ_{θ_j}` of a deconvolution teacher.
    pub fn spikes(&self) -> Result<SignedAtomicMeasure> {
        match self.family {
            Family::SparseDeconvolution { .. } => h1_project(&self.measure),
            _ => Err(Error::Config("spikes exist for deconvolution teachers only".into())),
        }
    }

    /// `y_k = Σ_j w_j ψ(k/n − θ_j)` plus Gaussian noise on the `n`-point grid.
    pub fn render_signal(&self, n: usize) -> Result<Vec<f64>> {
        let order = match self.family {
            Family::SparseDeconvolution { order } => order,
            _ => return Err(Error::Config("signals exist for deconvolution teachers only".into())),
        };
        let spikes = self.spikes()?;
        let mut rng = seeds::stream(self.seed, seeds::NOISE);
        Ok((0..n)
            .map(|k| {
                let x = k as f64 / n as f64;
                let clean: f64 = (0..spikes.len())
                    .map(|j| spikes.weight(j) * deconv::kernel(order, x - spikes.location(j)[0]))
                    .sum();
                clean + self.noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect())
    }

    fn input_dim(&self) -> usize {
        self.family.input_dim().unwrap_or(0)
    }

    /// Noiseless teacher output at each feature row.
    pub fn output(&self, features: &[f64]) -> Vec<f64> {
        let p = self.input_dim();
        let n = features.len() / p.max(1);
        let dummy = vec![0.0; n];
        let set = SampleSet {
            features,
            labels: &dummy,
            input_dim: p,
        };
        let mut f = vec![0.0; n];
        let mut buf = vec![0.0; n];
        for i in 0..self.measure.len() {
            network::evaluate(&self.family, self.measure.position(i), self.measure.sign(i), &set, &mut buf);
            for (a, b) in f.iter_mut().zip(&buf) {
                *a += self.measure.mass(i) * b;
            }
        }
        f
    }

    fn draw_features(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
        let p = self.input_dim();
        for _ in 0..n {
            let start = out.len();
            out.extend((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
            if self.features == Some(FeatureDistribution::UnitSphere) {
                let row = &mut out[start..];
                let r = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 0.0 {
                    row.iter_mut().for_each(|x| *x /= r);
                }
            }
        }
    }

    /// `n` labelled samples from the teacher's own stream for `stream`.
    pub fn dataset(&self, n: usize, stream: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seeds::stream(self.seed, stream);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        self.draw(&mut rng, n, &mut features, &mut labels);
        (features, labels)
    }
}

impl SampleGenerator for TeacherModel {
    fn draw(&self, rng: &mut ChaCha8Rng, n: usize, features: &mut Vec<f64>, labels: &mut Vec<f64>) {
        let start = features.len();
        self.draw_features(rng, n, features);
        let clean = self.output(&features[start..]);
        labels.extend(clean.iter().map(|y| y + self.noise * rng.sample::<f64, _>(StandardNormal)));
    }
}

/// Teacher plus the problem it generates: a signal on an `samples`-point
/// grid for deconvolution, `samples` training pairs for networks
/// (quadratic loss with parameter `lambda`).
pub fn make_teacher_problem(
    family: &Family,
    m0: usize,
    seed: u64,
    noise: f64,
    samples: usize,
    lambda: f64,
) -> Result<(TeacherModel, ProblemSpec)> {
    let teacher = make_teacher(family, m0, seed, noise)?;
    let spec = match family {
        Family::SparseDeconvolution { order } => {
            ProblemSpec::deconvolution(teacher.render_signal(samples)?, *order, lambda)?
        }
        _ => {
            let (features, labels) = teacher.dataset(samples, seeds::NOISE);
            ProblemSpec::network(family.clone(), features, labels, LossKind::Quadratic)?.with_lambda(lambda)?
        }
    };
    Ok((teacher, spec))
}

/// Loss of `mu` on `n` fresh teacher samples (the `EVAL` stream).
pub fn population_loss(spec: &ProblemSpec, mu: &ParticleMeasure, teacher: &TeacherModel, n: usize) -> Result<f64> {
    let (features, labels) = teacher.dataset(n, seeds::EVAL);
    let set = SampleSet::new(&features, &labels, teacher.input_dim())?;
    spec.loss_on(mu, &set)
}

/// Weights-only problem on fixed features `φ_j`: `c ↦ R(Σ c_j φ_j)`.
enum Design<'a> {
    Fourier {
        data: &'a deconv::Deconvolution,
        thetas: Vec<f64>,
        lambda: f64,
    },
    Matrix {
        columns: Vec<Vec<f64>>,
        weights: Vec<f64>,
        labels: &'a [f64],
        loss: LossKind,
        lambda: f64,
    },
}

impl Design<'_> {
    fn loss_grad(&self, c: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Design::Fourier { data, thetas, lambda } => {
                let flat: Vec<f64> = c.iter().zip(thetas).flat_map(|(w, t)| [*w, *t]).collect();
                let ones = vec![1.0; c.len()];
                let coeffs = data.embed_coeffs(&flat, &ones);
                let g = data.residual_coeffs(&coeffs, *lambda);
                for (gj, t) in grad.iter_mut().zip(thetas) {
                    *gj = data.correlate(&g, *t).0;
                }
                data.loss(&coeffs, *lambda)
            }
            Design::Matrix {
                columns,
                weights,
                labels,
                loss,
                lambda,
            } => {
                let mut f = vec![0.0; labels.len()];
                for (col, cj) in columns.iter().zip(c) {
                    if *cj != 0.0 {
                        for (a, b) in f.iter_mut().zip(col) {
                            *a += cj * b;
                        }
                    }
                }
                let r: Vec<f64> = f
                    .iter()
                    .zip(labels.iter())
                    .zip(weights)
                    .map(|((fv, y), w)| w * pointwise_loss_derivative(*loss, *lambda, *fv, *y))
                    .collect();
                for (gj, col) in grad.iter_mut().zip(columns) {
                    *gj = col.iter().zip(&r).map(|(a, b)| a * b).sum();
                }
                pointwise_loss(*loss, *lambda, &f, labels, weights)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    /// `R(Σ c_j φ_j) + reg_weight Σ |c_j|` at the returned weights.
    pub objective: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Norm of the proximal gradient mapping at termination.
    pub stationarity: f64,
    pub halvings: usize,
    pub converged: bool,
    /// The measure realizing `Σ c_j φ_j`, with masses `1/m`.
    pub measure: ParticleMeasure,
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Convex weights-only problem on the fixed features of `grid`'s atoms:
/// `min_c R(Σ c_j φ_j) + reg_weight Σ|c_j|`, where `φ_j` is `Φ(1, θ_j)`
/// for families with a weight coordinate and `Φ(u_j)` otherwise. The `|c|`
/// term is present when the problem uses `V = |w|`. Solved by FISTA with
/// adaptive restart to a proximal-gradient residual of `1e-10`.
pub fn fixed_grid_baseline(spec: &ProblemSpec, grid: &ParticleMeasure, max_iters: usize) -> Result<BaselineResult> {
    let family = spec.family().clone();
    if grid.dim() != spec.dim() {
        return Err(Error::Dimension(format!(
            "grid atoms live in R^{}, problem in R^{}",
            grid.dim(),
            spec.dim()
        )));
    }
    let m = grid.len();
    let design = match (&family, spec.deconvolution_data()) {
        (Family::SparseDeconvolution { .. }, Some(data)) => Design::Fourier {
            data,
            thetas: grid.position_rows().map(|u| u[1]).collect(),
            lambda: spec.lambda(),
        },
        _ => {
            let columns = (0..m)
                .map(|j| {
                    let mut u = grid.position(j).to_vec();
                    if family.has_weight() {
                        u[0] = 1.0;
                    }
                    spec.phi(&u, grid.sign(j)).map(|f| f.values().to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            Design::Matrix {
                columns,
                weights: spec.quad_weights().to_vec(),
                labels: spec.target(),
                loss: spec.loss_kind(),
                lambda: spec.lambda(),
            }
        }
    };
    let reg = if spec.regularizer() == Regularizer::AbsWeight {
        spec.reg_weight()
    } else {
        0.0
    };
    let objective = |c: &[f64], g: &mut [f64]| design.loss_grad(c, g) + reg * c.iter().map(|x| x.abs()).sum::<f64>();

    // Curvature of the smooth part by power iteration on gradient differences.
    let mut g0 = vec![0.0; m];
    let mut g1 = vec![0.0; m];
    design.loss_grad(&vec![0.0; m], &mut g0);
    let mut v: Vec<f64> = (0..m).map(|k| 1.0 + 0.5 * ((k as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    let mut curvature: f64 = 0.0;
    for _ in 0..50 {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= n);
        design.loss_grad(&v, &mut g1);
        v = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        curvature = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let mut step = 1.0 / (1.01 * curvature.max(1e-12));

    let mut x = vec![0.0; m];
    let mut fx = objective(&x, &mut g0);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut halvings = 0;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    let mut grad = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    while iterations < max_iters {
        iterations += 1;
        design.loss_grad(&y, &mut grad);
        let x_new: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| soft(yi - step * gi, step * reg)).collect();
        let f_new = objective(&x_new, &mut scratch);
        let momentum = y != x;
        if !(f_new <= fx + 1e-14 * (1.0 + fx.abs())) {
            if momentum {
                y.clone_from(&x);
                t = 1.0;
                continue;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::BaselineDiverged { halvings: MAX_HALVINGS });
            }
            step *= 0.5;
            continue;
        }
        stationarity = x_new.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / step;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let restart = y.iter().zip(&x_new).zip(&x).map(|((yi, xn), xo)| (yi - xn) * (xn - xo)).sum::<f64>() > 0.0;
        if restart {
            t = 1.0;
            y.clone_from(&x_new);
        } else {
            let beta = (t - 1.0) / t_new;
            y = x_new.iter().zip(&x).map(|(xn, xo)| xn + beta * (xn - xo)).collect();
            t = t_new;
        }
        x = x_new;
        fx = f_new;
        if stationarity <= BASELINE_TOLERANCE {
            break;
        }
    }
    let measure = weights_to_measure(&family, grid, &x)?;
    Ok(BaselineResult {
        objective: fx,
        weights: x,
        iterations,
        stationarity,
        halvings,
        converged: stationarity <= BASELINE_TOLERANCE,
        measure,
    })
}

/// The particle measure with masses `1/m` whose feature integral is
/// `Σ c_j φ_j`.
fn weights_to_measure(family: &Family, grid: &ParticleMeasure, c: &[f64]) -> Result<ParticleMeasure> {
    let m = grid.len() as f64;
    let mut positions = Vec::with_capacity(grid.positions().len());
    let mut signs = Vec::new();
    for (j, cj) in c.iter().enumerate() {
        let u = grid.position(j);
        if family.has_weight() {
            positions.push(m * cj);
            positions.extend_from_slice(&u[1..]);
        } else {
            // Φ is 2-homogeneous: c Φ_s(θ) = (1/m) Φ_{s·sign c}(√(m|c|) θ)
            let r = (m * cj.abs()).sqrt();
            positions.extend(u.iter().map(|x| r * x));
            let s = grid.sign(j) * if *cj < 0.0 { -1.0 } else { 1.0 };
            signs.push(if s < 0.0 { -1 } else { 1 });
        }
    }
    let mu = ParticleMeasure::uniform_flat(grid.dim(), positions)?;
    if family.uses_signs() {
        mu.with_signs(signs)
    } else {
        Ok(mu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchMethod {
    #[serde(rename = "particle-flow")]
    ParticleFlow,
    #[serde(rename = "fixed-grid")]
    FixedGrid,
}

impl BenchMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            BenchMethod::ParticleFlow => "particle-flow",
            BenchMethod::FixedGrid => "fixed-grid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub family: String,
    pub method: BenchMethod,
    pub m: usize,
    pub seed: u64,
    /// Objective (deconvolution) or population loss (networks); `None` on failure.
    pub value: Option<f64>,
    pub excess_loss: Option<f64>,
    pub wallclock_ms: Option<u64>,
    pub certified: bool,
    pub error: Option<String>,
}

fn default_tolerance() -> f64 {
    1e-3
}

fn default_baseline_iters() -> usize {
    200_000
}

fn default_eval_samples() -> usize {
    4096
}

fn default_sphere_radius() -> f64 {
    0.1
}

/// A particle-complexity experiment. The problem must use teacher data;
/// each seed draws a fresh teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemConfig,
    pub m_values: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_sphere_radius")]
    pub sphere_radius: f64,
    #[serde(default = "default_tolerance")]
    pub certificate_tolerance: f64,
    #[serde(default = "default_baseline_iters")]
    pub baseline_max_iters: usize,
    /// Held-out samples for the population loss of network runs.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Skip the certificate (costly for large network grids).
    #[serde(default = "default_true")]
    pub certify: bool,
    /// Fill the wallclock column (makes output files nondeterministic).
    #[serde(default)]
    pub record_wallclock: bool,
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return Err(Error::Config("m_values must be non-empty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if !matches!(self.problem.data, DataSource::Teacher { .. }) {
            return Err(Error::Config("sweeps need teacher-generated data".into()));
        }
        self.integrator.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: BenchMethod,
    pub m: usize,
    pub runs: usize,
    pub failures: usize,
    pub certified: usize,
    pub geometric_mean_excess: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub family: String,
    pub records: Vec<BenchmarkRecord>,
    pub summary: Vec<GroupSummary>,
}

struct Cell {
    seed: u64,
    m: usize,
}

struct RawResult {
    method: BenchMethod,
    value: Result<(f64, bool)>,
    wallclock_ms: u64,
}

fn run_cell(config: &SweepConfig, spec: &ProblemSpec, teacher: &TeacherModel, cell: &Cell) -> Vec<RawResult> {
    let family = spec.family();
    let scheme = match InitScheme::canonical(family, cell.m) {
        InitScheme::SphereShell { m, .. } => InitScheme::SphereShell {
            m,
            r0: config.sphere_radius,
        },
        other => other,
    };
    let measure_value = |mu: &ParticleMeasure| -> Result<f64> {
        if family.is_network() {
            population_loss(spec, mu, teacher, config.eval_samples)
        } else {
            spec.objective(mu)
        }
    };
    let certified = |mu: &ParticleMeasure| -> Result<bool> {
        if !config.certify {
            return Ok(false);
        }
        let grid = CertGrid::default_for(spec, mu, cell.seed);
        Ok(certify(spec, mu, &grid, config.certificate_tolerance, DEFAULT_SUPPORT_THRESHOLD)?.pass)
    };
    let mut out = Vec::new();
    let init = initial_measure(spec, &scheme, cell.seed);

    let start = Instant::now();
    let flow = init.as_ref().map_err(clone_error).and_then(|mu0| {
        let source = if family.is_network() {
            BatchSource::Generator(teacher)
        } else {
            BatchSource::Dataset
        };
        let out = run_from(spec, mu0.clone(), &config.integrator, cell.seed, &source)?;
        let v = measure_value(&out.state.measure)?;
        Ok((v, certified(&out.state.measure)?))
    });
    out.push(RawResult {
        method: BenchMethod::ParticleFlow,
        value: flow,
        wallclock_ms: start.elapsed().as_millis() as u64,
    });

    let start = Instant::now();
    let baseline = init.as_ref().map_err(clone_error).and_then(|mu0| {
        let b = fixed_grid_baseline(spec, mu0, config.baseline_max_iters)?;
        let v = if family.is_network() {
            measure_value(&b.measure)?
        } else {
            b.objective
        };
        Ok((v, certified(&b.measure)?))
    });
    out.push(RawResult {
        method: BenchMethod::FixedGrid,
        value: baseline,
        wallclock_ms: start.elapsed().as_millis() as u64,
    });
    out
}

fn clone_error(e: &Error) -> Error {
    Error::Config(e.to_string())
}

/// Runs the particle flow and the fixed-grid baseline for every `(m, seed)`.
///
/// Deconvolution excess is measured against the best objective found for
/// the same seed across all methods and `m`; network excess is the
/// held-out population loss (the teacher attains 0). Cells run on the
/// current rayon pool; records are ordered by `(seed, m, method)`.
pub fn particle_complexity_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    config.validate()?;
    let family = config.problem.family.clone();
    let per_seed: Vec<Vec<BenchmarkRecord>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let built = match &config.problem.data {
                DataSource::Teacher {
                    teacher_size,
                    noise,
                    samples,
                } => make_teacher_problem(&family, *teacher_size, seed, *noise, *samples, config.problem.lambda)
                    .and_then(|(t, s)| {
                        let reg = config.problem.regularizer.unwrap_or_else(|| family.default_regularizer());
                        Ok((t, s.with_regularizer(reg, config.problem.reg_weight)?))
                    }),
                _ => unreachable!("validated"),
            };
            let raw: Vec<(usize, RawResult)> = match &built {
                Ok((teacher, spec)) => config
                    .m_values
                    .par_iter()
                    .flat_map_iter(|&m| {
                        run_cell(config, spec, teacher, &Cell { seed, m })
                            .into_iter()
                            .map(move |r| (m, r))
                    })
                    .collect(),
                Err(e) => config
                    .m_values
                    .iter()
                    .flat_map(|&m| {
                        [BenchMethod::ParticleFlow, BenchMethod::FixedGrid].map(|method| {
                            (
                                m,
                                RawResult {
                                    method,
                                    value: Err(clone_error(e)),
                                    wallclock_ms: 0,
                                },
                            )
                        })
                    })
                    .collect(),
            };
            let best = if family.is_network() {
                0.0
            } else {
                raw.iter()
                    .filter_map(|(_, r)| r.value.as_ref().ok().map(|v| v.0))
                    .fold(f64::INFINITY, f64::min)
            };
            raw.into_iter()
                .map(|(m, r)| {
                    let (value, excess, certified, error) = match r.value {
                        Ok((v, c)) => (Some(v), Some(v - best), c, None),
                        Err(e) => (None, None, false, Some(e.to_string())),
                    };
                    BenchmarkRecord {
                        family: family.tag().to_string(),
                        method: r.method,
                        m,
                        seed,
                        value,
                        excess_loss: excess,
                        wallclock_ms: config.record_wallclock.then_some(r.wallclock_ms),
                        certified,
                        error,
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<BenchmarkRecord> = per_seed.into_iter().flatten().collect();
    let summary = summarize(&records, &config.m_values);
    Ok(SweepOutput {
        family: family.tag().to_string(),
        records,
        summary,
    })
}

/// Geometric mean of `max(x, EXCESS_FLOOR)`.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let s: f64 = values.iter().map(|x| x.max(EXCESS_FLOOR).ln()).sum();
    Some((s / values.len() as f64).exp())
}

fn summarize(records: &[BenchmarkRecord], m_values: &[usize]) -> Vec<GroupSummary> {
    let mut out = Vec::new();
    for method in [BenchMethod::ParticleFlow, BenchMethod::FixedGrid] {
        for &m in m_values {
            let group: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.method == method && r.m == m).collect();
            let excess: Vec<f64> = group.iter().filter_map(|r| r.excess_loss).collect();
            out.push(GroupSummary {
                method,
                m,
                runs: group.len(),
                failures: group.iter().filter(|r| r.error.is_some()).count(),
                certified: group.iter().filter(|r| r.certified).count(),
                geometric_mean_excess: geometric_mean(&excess),
            });
        }
    }
    out
}

impl SweepOutput {
    pub fn group(&self, method: BenchMethod, m: usize) -> Option<&GroupSummary> {
        self.summary.iter().find(|g| g.method == method && g.m == m)
    }

    /// `sweep.csv` (one row per record) and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["family", "method", "m", "seed", "excess_loss", "wallclock_ms", "certified"])?;
        for r in &self.records {
            w.write_record([
                r.family.clone(),
                r.method.tag().to_string(),
                r.m.to_string(),
                r.seed.to_string(),
                r.excess_loss.map(|x| format!("{x:?}")).unwrap_or_else(|| "NaN".into()),
                r.wallclock_ms.map(|x| x.to_string()).unwrap_or_default(),
                r.certified.to_string(),
            ])?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Summary<'a> {
            family: &'a str,
            excess_floor: f64,
            groups: &'a [GroupSummary],
            failures: Vec<&'a BenchmarkRecord>,
        }
        let summary = Summary {
            family: &self.family,
            excess_floor: EXCESS_FLOOR,
            groups: &self.summary,
            failures: self.records.iter().filter(|r| r.error.is_some()).collect(),
        };
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub m: usize,
    /// `W₂` between the `m`-particle and `4m`-particle states at the horizon.
    pub w2: f64,
}

/// Runs flows from nested zero-slice grids with `m` and `4m` particles to
/// time `horizon` with a fixed step `dt`, and reports `W₂` between the two
/// terminal states after replicating each `m`-state atom four times.
pub fn consistency_sweep(
    spec: &ProblemSpec,
    m_values: &[usize],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<ConsistencyPoint>> {
    if m_values.is_empty() {
        return Err(Error::Config("m_values must be non-empty".into()));
    }
    let config = IntegratorConfig {
        method: Method::ForwardBackward,
        dt: DtPolicy::Fixed { dt },
        max_steps: usize::MAX,
        max_time: Some(horizon),
        tolerance: 0.0,
        snapshots: false,
        record_every: usize::MAX,
        norm_bound: None,
    };
    let terminal = |m: usize| -> Result<ParticleMeasure> {
        let scheme = InitScheme::GridOnZeroSlice { m, half_width: 3.0 };
        let mu0 = initial_measure(spec, &scheme, seed)?;
        Ok(run_from(spec, mu0, &config, seed, &BatchSource::Dataset)?.state.measure)
    };
    m_values
        .par_iter()
        .map(|&m| {
            let coarse = terminal(m)?.replicate(4);
            let fine = terminal(4 * m)?;
            Ok(ConsistencyPoint {
                m,
                w2: w2_distance(&coarse, &fine)?,
            })
        })
        .collect()
}

/// `W₂` between a uniform `m`-grid and a uniform `4m`-grid on `[0, 1)` in
/// the `θ` coordinate, both at `w = 0`: `√14 / (8m)`.
pub fn nested_grid_discrepancy(m: usize) -> f64 {
    14f64.sqrt() / (8.0 * m as f64)
}

#[cfg(test)]
mod tests;
