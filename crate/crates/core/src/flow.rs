//! Discrete-time particle gradient flow.
//!
//! Three integrators are provided: forward-backward (explicit step on the
//! loss, proximal step on the regularizer), plain explicit steps along the
//! minimal-norm velocity, and mini-batch stochastic steps for networks.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use crate::problems::{Family, Homogeneity, ProblemSpec, SampleSet, SmoothEval};
use crate::seeds;

/// Default safety factor in `dt = 1/(safety · L̂)`.
pub const DEFAULT_SAFETY: f64 = 10.0;
/// Default number of steps between step-size re-estimates.
pub const DEFAULT_REFRESH: usize = 500;
/// Default stopping tolerance on the mean squared velocity.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const POWER_ITERATIONS: usize = 30;
const MAX_HALVINGS: usize = 60;

/// Relative per-step energy slack for deterministic integrators.
pub fn energy_slack(energy: f64) -> f64 {
    1e-10 * (1.0 + energy.abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub measure: ParticleMeasure,
    pub time: f64,
    pub step_index: usize,
    /// `(time, F)` pairs. For stochastic steps `F` is the mini-batch objective.
    pub energy_history: Vec<(f64, f64)>,
    /// `(time, Σ_i q_i |v_i|²)` pairs.
    pub grad_norm_history: Vec<(f64, f64)>,
}

impl FlowState {
    /// State at time 0 with the initial energy recorded.
    pub fn new(spec: &ProblemSpec, measure: ParticleMeasure) -> Result<Self> {
        let eval = spec.smooth_eval(&measure).map_err(integration_error)?;
        let (energy, msv) = summarize(spec, &measure, &eval);
        Ok(Self {
            measure,
            time: 0.0,
            step_index: 0,
            energy_history: vec![(0.0, energy)],
            grad_norm_history: vec![(0.0, msv)],
        })
    }

    pub fn energy(&self) -> Option<f64> {
        self.energy_history.last().map(|e| e.1)
    }

    pub fn mean_squared_velocity(&self) -> Option<f64> {
        self.grad_norm_history.last().map(|e| e.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// `w = 0` and `θ` on a uniform grid of the torus, or quasi-uniform in
    /// `[-half_width, half_width]^{p+1}` for networks.
    GridOnZeroSlice {
        m: usize,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// Quasi-uniform on the sphere of radius `r0` (2-homogeneous families).
    SphereShell { m: usize, r0: f64 },
    /// Grid positions with `w` cycling through the given levels.
    OffsetSlice {
        m: usize,
        levels: Vec<f64>,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    Custom { measure: ParticleMeasure },
}

fn default_half_width() -> f64 {
    3.0
}

impl InitScheme {
    pub fn particle_count(&self) -> usize {
        match self {
            InitScheme::GridOnZeroSlice { m, .. } | InitScheme::SphereShell { m, .. } | InitScheme::OffsetSlice { m, .. } => {
                *m
            }
            InitScheme::Custom { measure } => measure.len(),
        }
    }

    /// Canonical initialization for a family: zero slice for partially
    /// 1-homogeneous families, a small sphere for 2-homogeneous ones.
    pub fn canonical(family: &Family, m: usize) -> Self {
        match family.homogeneity() {
            Homogeneity::PartialOne => InitScheme::GridOnZeroSlice {
                m,
                half_width: default_half_width(),
            },
            Homogeneity::Two => InitScheme::SphereShell { m, r0: 0.1 },
        }
    }
}

/// Initial measure with masses `1/m`. `seed` feeds the quasi-random shifts
/// used off the torus.
pub fn initial_measure(spec: &ProblemSpec, scheme: &InitScheme, seed: u64) -> Result<ParticleMeasure> {
    let family = spec.family();
    let d = spec.dim();
    if scheme.particle_count() == 0 {
        return Err(Error::Config("initialization needs m >= 1".into()));
    }
    let mut rng = seeds::stream(seed, seeds::INIT);
    match scheme {
        InitScheme::Custom { measure } => {
            if measure.dim() != d {
                return Err(Error::Dimension(format!(
                    "custom initial measure lives in R^{}, problem in R^{d}",
                    measure.dim()
                )));
            }
            Ok(measure.clone())
        }
        InitScheme::GridOnZeroSlice { m, half_width } => slice_init(spec, &mut rng, *m, &[0.0], *half_width),
        InitScheme::OffsetSlice { m, levels, half_width } => {
            if levels.is_empty() {
                return Err(Error::Config("offset initialization needs at least one level".into()));
            }
            slice_init(spec, &mut rng, *m, levels, *half_width)
        }
        InitScheme::SphereShell { m, r0 } => {
            if family.homogeneity() != Homogeneity::Two {
                return Err(Error::Config(format!(
                    "sphere initialization needs a 2-homogeneous family, {} is partially 1-homogeneous",
                    family.tag()
                )));
            }
            if !(*r0 > 0.0) {
                return Err(Error::Config(format!("sphere radius must be positive, got {r0}")));
            }
            let dirs = sphere_directions(d, *m, &mut rng);
            let positions: Vec<f64> = dirs.iter().map(|x| x * r0).collect();
            let mu = ParticleMeasure::uniform_flat(d, positions)?;
            if family.uses_signs() {
                mu.with_signs((0..*m).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect())
            } else {
                Ok(mu)
            }
        }
    }
}

fn slice_init(spec: &ProblemSpec, rng: &mut ChaCha8Rng, m: usize, levels: &[f64], half_width: f64) -> Result<ParticleMeasure> {
    let family = spec.family();
    if !family.has_weight() {
        return Err(Error::Config(format!(
            "slice initialization needs a weight coordinate, which {} particles do not have",
            family.tag()
        )));
    }
    let d = spec.dim();
    let mut positions = Vec::with_capacity(m * d);
    match family {
        Family::SparseDeconvolution { .. } => {
            for i in 0..m {
                positions.push(levels[i % levels.len()]);
                positions.push(i as f64 / m as f64);
            }
        }
        _ => {
            if !(half_width > 0.0) {
                return Err(Error::Config(format!("box half width must be positive, got {half_width}")));
            }
            let shift: Vec<f64> = (0..d - 1).map(|_| rng.random::<f64>()).collect();
            for i in 0..m {
                positions.push(levels[i % levels.len()]);
                let h = seeds::halton(i as u64, d - 1, &shift);
                positions.extend(h.iter().map(|x| (2.0 * x - 1.0) * half_width));
            }
        }
    }
    ParticleMeasure::uniform_flat(d, positions)
}

/// `m` unit vectors in `ℝ^d`, flat. Equispaced with a random phase on the
/// circle, shifted Halton points pushed through the Gaussian quantile
/// function and normalized otherwise.
fn sphere_directions(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * d);
    if d == 1 {
        for i in 0..m {
            out.push(if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        return out;
    }
    if d == 2 {
        let phase = rng.random::<f64>() * TAU / m as f64;
        for i in 0..m {
            let a = phase + TAU * i as f64 / m as f64;
            out.push(a.cos());
            out.push(a.sin());
        }
        return out;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    for i in 0..m {
        let mut v: Vec<f64> = seeds::halton(i as u64, d, &shift)
            .iter()
            .map(|p| normal.inverse_cdf(p.clamp(1e-12, 1.0 - 1e-12)))
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        out.extend(v);
    }
    out
}

/// `initial_measure` wrapped in a fresh state.
pub fn initialize(spec: &ProblemSpec, scheme: &InitScheme, seed: u64) -> Result<FlowState> {
    FlowState::new(spec, initial_measure(spec, scheme, seed)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    ForwardBackward,
    Explicit,
    Sgd { batch_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed { dt: f64 },
    /// `dt = 1/(safety · L̂)` with `L̂` re-estimated every `refresh_every`
    /// steps; deterministic integrators also reject energy-increasing steps
    /// and retry at half the step.
    Auto {
        #[serde(default = "default_safety")]
        safety: f64,
        #[serde(default = "default_refresh")]
        refresh_every: usize,
    },
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}

fn default_refresh() -> usize {
    DEFAULT_REFRESH
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Auto {
            safety: DEFAULT_SAFETY,
            refresh_every: DEFAULT_REFRESH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Flow-time horizon; the last step is shortened to land on it.
    #[serde(default)]
    pub max_time: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Keep snapshots at steps 0, 1, 2, 4, 8, ... and at the end.
    #[serde(default = "default_true")]
    pub snapshots: bool,
    /// Record energy and velocity every this many steps.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Flag the first particle whose norm exceeds this bound.
    #[serde(default)]
    pub norm_bound: Option<f64>,
}

fn default_method() -> Method {
    Method::ForwardBackward
}

fn default_max_steps() -> usize {
    100_000
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_true() -> bool {
    true
}

fn default_record_every() -> usize {
    1
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            dt: DtPolicy::default(),
            max_steps: default_max_steps(),
            max_time: None,
            tolerance: default_tolerance(),
            snapshots: true,
            record_every: 1,
            norm_bound: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        match self.dt {
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::Config(format!("dt must be positive and finite, got {dt}")))
            }
            DtPolicy::Auto { safety, refresh_every } if !(safety > 0.0) || refresh_every == 0 => {
                return Err(Error::Config("auto step needs safety > 0 and refresh_every >= 1".into()))
            }
            _ => {}
        }
        if let Method::Sgd { batch_size: 0 } = self.method {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!("tolerance must be nonnegative, got {}", self.tolerance)));
        }
        if self.max_time.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::Config("max_time must be nonnegative".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Source of fresh samples for stochastic steps.
pub trait SampleGenerator: Sync {
    /// Appends `n` feature rows and labels.
    fn draw(&self, rng: &mut ChaCha8Rng, n: usize, features: &mut Vec<f64>, labels: &mut Vec<f64>);
}

pub enum BatchSource<'a> {
    /// Resample the problem's dataset with replacement.
    Dataset,
    Generator(&'a dyn SampleGenerator),
}

fn integration_error(e: Error) -> Error {
    match e {
        Error::NonDifferentiable(msg) => {
            let particle = msg
                .strip_prefix("particle ")
                .and_then(|s| s.split(':').next())
                .and_then(|s| s.parse().ok())
                .unwrap_or(usize::MAX);
            Error::Integration { particle, reason: msg }
        }
        other => other,
    }
}

/// Objective and mean squared minimal-norm velocity from a smooth evaluation.
fn summarize(spec: &ProblemSpec, mu: &ParticleMeasure, eval: &SmoothEval) -> (f64, f64) {
    let d = spec.dim();
    let mut msv = 0.0;
    let mut v = vec![0.0; d];
    for (i, vt) in eval.velocity.chunks_exact(d).enumerate() {
        v.copy_from_slice(vt);
        spec.correct_in_place(mu.position(i), &mut v);
        msv += mu.mass(i) * v.iter().map(|x| x * x).sum::<f64>();
    }
    (eval.loss + spec.reg_integral(mu), msv)
}

fn forward_backward_update(spec: &ProblemSpec, mu: &mut ParticleMeasure, velocity: &[f64], dt: f64) {
    let d = spec.dim();
    let tau = dt * spec.reg_weight();
    for (u, v) in mu.positions_mut().chunks_exact_mut(d).zip(velocity.chunks_exact(d)) {
        for (x, vx) in u.iter_mut().zip(v) {
            *x += dt * vx;
        }
        spec.prox_in_place(u, tau);
    }
}

fn explicit_update(spec: &ProblemSpec, mu: &mut ParticleMeasure, velocity: &[f64], dt: f64) {
    let d = spec.dim();
    let mut v = vec![0.0; d];
    for (u, vt) in mu.positions_mut().chunks_exact_mut(d).zip(velocity.chunks_exact(d)) {
        v.copy_from_slice(vt);
        spec.correct_in_place(u, &mut v);
        for (x, vx) in u.iter_mut().zip(&v) {
            *x += dt * vx;
        }
    }
}

fn advance(state: &FlowState, spec: &ProblemSpec, measure: ParticleMeasure, dt: f64, eval: &SmoothEval) -> FlowState {
    let (energy, msv) = summarize(spec, &measure, eval);
    let time = state.time + dt;
    let mut energy_history = state.energy_history.clone();
    energy_history.push((time, energy));
    let mut grad_norm_history = state.grad_norm_history.clone();
    grad_norm_history.push((time, msv));
    FlowState {
        measure,
        time,
        step_index: state.step_index + 1,
        energy_history,
        grad_norm_history,
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("dt must be positive and finite, got {dt}")))
    }
}

/// One step `u⁺ = prox_{dt·V}(u + dt·ṽ(u))` per particle.
pub fn step_forward_backward(spec: &ProblemSpec, state: &FlowState, dt: f64) -> Result<FlowState> {
    check_dt(dt)?;
    let eval = spec.smooth_eval(&state.measure).map_err(integration_error)?;
    let mut mu = state.measure.clone();
    forward_backward_update(spec, &mut mu, &eval.velocity, dt);
    let next = spec.smooth_eval(&mu).map_err(integration_error)?;
    Ok(advance(state, spec, mu, dt, &next))
}

/// One step `u⁺ = u + dt·v(u)` along the minimal-norm velocity.
pub fn step_explicit(spec: &ProblemSpec, state: &FlowState, dt: f64) -> Result<FlowState> {
    check_dt(dt)?;
    let eval = spec.smooth_eval(&state.measure).map_err(integration_error)?;
    let mut mu = state.measure.clone();
    explicit_update(spec, &mut mu, &eval.velocity, dt);
    let next = spec.smooth_eval(&mu).map_err(integration_error)?;
    Ok(advance(state, spec, mu, dt, &next))
}

struct Batch {
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Batch {
    fn draw(spec: &ProblemSpec, source: &BatchSource, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::with_capacity(batch_size);
        match source {
            BatchSource::Dataset => {
                let set = spec
                    .samples()
                    .ok_or_else(|| Error::Config("mini-batches need a network family".into()))?;
                if batch_size == set.len() {
                    // A full-size batch is the dataset itself, so full-batch
                    // SGD coincides with the deterministic step.
                    return Ok(Self {
                        features: set.features.to_vec(),
                        labels: set.labels.to_vec(),
                    });
                }
                for _ in 0..batch_size {
                    let k = rng.random_range(0..set.len());
                    features.extend_from_slice(set.row(k));
                    labels.push(set.labels[k]);
                }
            }
            BatchSource::Generator(g) => g.draw(rng, batch_size, &mut features, &mut labels),
        }
        Ok(Self { features, labels })
    }

    fn set(&self, p: usize) -> SampleSet<'_> {
        SampleSet {
            features: &self.features,
            labels: &self.labels,
            input_dim: p,
        }
    }
}

fn batch_eval(spec: &ProblemSpec, mu: &ParticleMeasure, batch: &Batch) -> Result<SmoothEval> {
    let p = spec.family().input_dim().expect("network family");
    spec.smooth_eval_on(mu, batch.set(p)).map_err(integration_error)
}

/// Forward-backward step with the loss gradient taken on a fresh batch.
/// The recorded energy is the objective on that same batch at the new state.
pub fn step_sgd(
    spec: &ProblemSpec,
    state: &FlowState,
    dt: f64,
    batch_size: usize,
    source: &BatchSource,
    rng: &mut ChaCha8Rng,
) -> Result<FlowState> {
    check_dt(dt)?;
    if !spec.family().is_network() {
        return Err(Error::Config("stochastic steps apply to network families only".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let batch = Batch::draw(spec, source, batch_size, rng)?;
    let eval = batch_eval(spec, &state.measure, &batch)?;
    let mut mu = state.measure.clone();
    forward_backward_update(spec, &mut mu, &eval.velocity, dt);
    let next = batch_eval(spec, &mu, &batch)?;
    Ok(advance(state, spec, mu, dt, &next))
}

/// Power-iteration estimate of the Lipschitz constant of the smooth
/// velocity field `U ↦ ṽ(U)` at `mu`, using central-difference
/// Jacobian-vector products.
pub fn estimate_lipschitz(spec: &ProblemSpec, mu: &ParticleMeasure) -> Result<f64> {
    let n = mu.positions().len();
    let scale = 1.0 + mu.max_norm();
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.5 * ((k as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    normalize(&mut v);
    let mut plus = mu.clone();
    let mut minus = mu.clone();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let eps = 1e-6 * scale;
        for ((p, m), (x, vx)) in plus
            .positions_mut()
            .iter_mut()
            .zip(minus.positions_mut().iter_mut())
            .zip(mu.positions().iter().zip(&v))
        {
            *p = x + eps * vx;
            *m = x - eps * vx;
        }
        let a = spec.smooth_eval(&plus).map_err(integration_error)?;
        let b = spec.smooth_eval(&minus).map_err(integration_error)?;
        let mut jv: Vec<f64> = a.velocity.iter().zip(&b.velocity).map(|(x, y)| (x - y) / (2.0 * eps)).collect();
        let norm = normalize(&mut jv);
        if !norm.is_finite() {
            return Err(Error::Diverged {
                step: 0,
                energy: f64::NAN,
            });
        }
        estimate = norm;
        if norm == 0.0 {
            break;
        }
        v = jv;
    }
    Ok(estimate)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// `1/(safety · L̂)` at `mu`.
pub fn auto_dt(spec: &ProblemSpec, mu: &ParticleMeasure, safety: f64) -> Result<f64> {
    let l = estimate_lipschitz(spec, mu)?;
    Ok(1.0 / (safety * l.max(1e-6)))
}

/// Default step `1/(10 · L̂)` at `mu`.
pub fn default_dt(spec: &ProblemSpec, mu: &ParticleMeasure) -> Result<f64> {
    auto_dt(spec, mu, DEFAULT_SAFETY)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    Converged,
    MaxTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub measure: ParticleMeasure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormViolation {
    pub step: usize,
    pub particle: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub state: FlowState,
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    pub final_dt: f64,
    pub rejected_steps: usize,
    pub norm_violation: Option<NormViolation>,
}

/// Integrates from `scheme` until `max_steps`, the time horizon, or mean
/// squared velocity at most `tolerance`.
pub fn run(spec: &ProblemSpec, scheme: &InitScheme, config: &IntegratorConfig, seed: u64) -> Result<RunOutput> {
    run_with_source(spec, scheme, config, seed, &BatchSource::Dataset)
}

pub fn run_with_source(
    spec: &ProblemSpec,
    scheme: &InitScheme,
    config: &IntegratorConfig,
    seed: u64,
    source: &BatchSource,
) -> Result<RunOutput> {
    config.validate()?;
    let mu = initial_measure(spec, scheme, seed)?;
    run_from(spec, mu, config, seed, source)
}

/// As [`run`] from an explicit initial measure.
pub fn run_from(
    spec: &ProblemSpec,
    mut mu: ParticleMeasure,
    config: &IntegratorConfig,
    seed: u64,
    source: &BatchSource,
) -> Result<RunOutput> {
    config.validate()?;
    let stochastic = match config.method {
        Method::Sgd { batch_size } => {
            if !spec.family().is_network() {
                return Err(Error::Config("stochastic steps apply to network families only".into()));
            }
            Some(batch_size)
        }
        _ => None,
    };
    let mut rng = seeds::stream(seed, seeds::SGD);
    let (mut dt, auto) = match config.dt {
        DtPolicy::Fixed { dt } => (dt, None),
        DtPolicy::Auto { safety, refresh_every } => (auto_dt(spec, &mu, safety)?, Some((safety, refresh_every))),
    };

    // Current evaluation: full data for deterministic methods, the batch
    // about to be used for stochastic ones.
    let mut batch = match stochastic {
        Some(b) => Some(Batch::draw(spec, source, b, &mut rng)?),
        None => None,
    };
    let evaluate = |mu: &ParticleMeasure, batch: &Option<Batch>| -> Result<SmoothEval> {
        match batch {
            Some(b) => batch_eval(spec, mu, b),
            None => spec.smooth_eval(mu).map_err(integration_error),
        }
    };
    let mut eval = evaluate(&mu, &batch)?;
    let (mut energy, mut msv) = summarize(spec, &mu, &eval);
    let mut time = 0.0;
    let mut energy_history = vec![(0.0, energy)];
    let mut grad_norm_history = vec![(0.0, msv)];
    let mut snapshots = Vec::new();
    if config.snapshots {
        snapshots.push(Snapshot {
            step: 0,
            time: 0.0,
            measure: mu.clone(),
        });
    }
    let mut norm_violation = None;
    let mut rejected = 0;
    let mut step = 0;
    if !energy.is_finite() {
        return Err(Error::Diverged { step: 0, energy });
    }

    let termination = loop {
        if msv <= config.tolerance {
            break Termination::Converged;
        }
        if config.max_time.is_some_and(|t| time >= t) {
            break Termination::MaxTime;
        }
        if step >= config.max_steps {
            break Termination::MaxSteps;
        }
        if let Some((safety, refresh)) = auto {
            if step > 0 && step % refresh == 0 {
                dt = auto_dt(spec, &mu, safety)?;
            }
        }
        let h = match config.max_time {
            Some(t) => dt.min(t - time),
            None => dt,
        };
        let (next_mu, next_eval, h) = if let Some(b) = stochastic {
            let mut candidate = mu.clone();
            forward_backward_update(spec, &mut candidate, &eval.velocity, h);
            batch = Some(Batch::draw(spec, source, b, &mut rng)?);
            let ce = evaluate(&candidate, &batch)?;
            (candidate, ce, h)
        } else {
            let mut h = h;
            let mut halvings = 0;
            loop {
                let mut candidate = mu.clone();
                match config.method {
                    Method::Explicit => explicit_update(spec, &mut candidate, &eval.velocity, h),
                    _ => forward_backward_update(spec, &mut candidate, &eval.velocity, h),
                }
                let ce = evaluate(&candidate, &batch)?;
                let ce_energy = ce.loss + spec.reg_integral(&candidate);
                let increased = !(ce_energy <= energy + energy_slack(energy));
                if auto.is_some() && increased && halvings < MAX_HALVINGS {
                    dt *= 0.5;
                    h *= 0.5;
                    halvings += 1;
                    rejected += 1;
                    continue;
                }
                break (candidate, ce, h);
            }
        };
        let (next_energy, next_msv) = summarize(spec, &next_mu, &next_eval);
        step += 1;
        time += h;
        if !next_energy.is_finite() {
            return Err(Error::Diverged {
                step,
                energy: next_energy,
            });
        }
        mu = next_mu;
        energy = next_energy;
        msv = next_msv;
        eval = next_eval;
        if step % config.record_every == 0 {
            energy_history.push((time, energy));
            grad_norm_history.push((time, msv));
        }
        if let (Some(bound), None) = (config.norm_bound, &norm_violation) {
            if let Some((particle, norm)) = mu
                .position_rows()
                .map(crate::measures::norm)
                .enumerate()
                .find(|(_, n)| *n > bound)
            {
                norm_violation = Some(NormViolation { step, particle, norm });
            }
        }
        if config.snapshots && step.is_power_of_two() {
            snapshots.push(Snapshot {
                step,
                time,
                measure: mu.clone(),
            });
        }
    };
    if energy_history.last().map(|e| e.0) != Some(time) {
        energy_history.push((time, energy));
        grad_norm_history.push((time, msv));
    }
    if config.snapshots && snapshots.last().map(|s| s.step) != Some(step) {
        snapshots.push(Snapshot {
            step,
            time,
            measure: mu.clone(),
        });
    }
    Ok(RunOutput {
        state: FlowState {
            measure: mu,
            time,
            step_index: step,
            energy_history,
            grad_norm_history,
        },
        snapshots,
        termination,
        final_dt: dt,
        rejected_steps: rejected,
        norm_violation,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    termination: Termination,
    steps: usize,
    time: f64,
    final_dt: f64,
    rejected_steps: usize,
    norm_violation: &'a Option<NormViolation>,
    final_energy: Option<f64>,
    snapshots: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    step: usize,
    time: f64,
    file: String,
}

impl RunOutput {
    /// Writes `trajectory.json`, one `snapshot_<step>.csv` per snapshot,
    /// `energy.csv` and `final_measure.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for s in &self.snapshots {
            let file = format!("snapshot_{:08}.csv", s.step);
            s.measure.save(&dir.join(&file))?;
            entries.push(ManifestEntry {
                step: s.step,
                time: s.time,
                file,
            });
        }
        let manifest = Manifest {
            termination: self.termination,
            steps: self.state.step_index,
            time: self.state.time,
            final_dt: self.final_dt,
            rejected_steps: self.rejected_steps,
            norm_violation: &self.norm_violation,
            final_energy: self.state.energy(),
            snapshots: entries,
        };
        std::fs::write(dir.join("trajectory.json"), serde_json::to_string_pretty(&manifest)?)?;
        let mut w = csv::Writer::from_path(dir.join("energy.csv"))?;
        w.write_record(["time", "energy", "mean_squared_velocity"])?;
        for ((t, e), (_, g)) in self.state.energy_history.iter().zip(&self.state.grad_norm_history) {
            w.write_record([format!("{t:?}"), format!("{e:?}"), format!("{g:?}")])?;
        }
        w.flush()?;
        self.state.measure.save(&dir.join("final_measure.json"))?;
        Ok(())
    }
}
