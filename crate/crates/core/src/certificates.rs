//! Optimality certificates and escape diagnostics from the first variation
//! `F'(μ)`, plus a finite-difference validator for the gradients used by
//! the flow.
//!
//! `F'(μ)` is tested on a finite grid: the `w = ±1` slices for partially
//! 1-homogeneous families (whose `F'` is 1-homogeneous in `w`) and the unit
//! sphere for 2-homogeneous ones. The grid, its spacing and a Lipschitz
//! estimate of `F'` are reported alongside every verdict.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{norm, ParticleMeasure};
use crate::problems::{Family, Homogeneity, Potential, ProblemSpec, Regularizer};
use crate::seeds;

pub const DEFAULT_TORUS_POINTS: usize = 1024;
pub const DEFAULT_SAMPLED_POINTS: usize = 4096;
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

/// Points at which `F'(μ)` is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CertGrid {
    /// `n` equispaced `θ` on the 1-torus, at `w = ±1`.
    Torus { points: usize },
    /// Explicit `θ` points, at `w = ±1`.
    Slice { points: Vec<Vec<f64>>, spacing: f64 },
    /// Explicit unit vectors; both copies for tagged families.
    Sphere { points: Vec<Vec<f64>>, spacing: f64 },
}

impl CertGrid {
    /// The default grid: 1024 torus points for deconvolution, and 4096
    /// seeded points for networks, in a box three times the current
    /// particle radius (slices) or on the unit sphere.
    pub fn default_for(spec: &ProblemSpec, mu: &ParticleMeasure, seed: u64) -> Self {
        Self::sampled(spec, mu, seed, DEFAULT_SAMPLED_POINTS)
    }

    pub fn sampled(spec: &ProblemSpec, mu: &ParticleMeasure, seed: u64, n: usize) -> Self {
        let family = spec.family();
        if let Family::SparseDeconvolution { .. } = family {
            return CertGrid::Torus {
                points: DEFAULT_TORUS_POINTS,
            };
        }
        let mut rng = seeds::stream(seed, seeds::CERT_GRID);
        match family.homogeneity() {
            Homogeneity::PartialOne => {
                let k = spec.dim() - 1;
                let radius = mu
                    .position_rows()
                    .map(|u| u[1..].iter().fold(0.0f64, |a, x| a.max(x.abs())))
                    .fold(0.0f64, f64::max)
                    .max(1.0);
                let half = 3.0 * radius;
                let points = (0..n)
                    .map(|_| (0..k).map(|_| half * (2.0 * rng.random::<f64>() - 1.0)).collect())
                    .collect();
                CertGrid::Slice {
                    points,
                    spacing: 2.0 * half / (n as f64).powf(1.0 / k as f64),
                }
            }
            Homogeneity::Two => {
                let d = spec.dim();
                let points: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                        let r = norm(&v);
                        v.into_iter().map(|x| x / r).collect()
                    })
                    .collect();
                let area = sphere_area(d);
                CertGrid::Sphere {
                    points,
                    spacing: (area / n as f64).powf(1.0 / (d as f64 - 1.0).max(1.0)),
                }
            }
        }
    }

    /// Grid resolution: cell width on the torus, an estimated fill
    /// distance for sampled grids.
    pub fn spacing(&self) -> f64 {
        match self {
            CertGrid::Torus { points } => 1.0 / *points as f64,
            CertGrid::Slice { spacing, .. } | CertGrid::Sphere { spacing, .. } => *spacing,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CertGrid::Torus { points } => format!("torus grid, {points} points, w = +/-1 slices"),
            CertGrid::Slice { points, spacing } => {
                format!("{} sampled slice points, w = +/-1, spacing ~{spacing:.3e}", points.len())
            }
            CertGrid::Sphere { points, spacing } => {
                format!("{} sampled unit-sphere points, spacing ~{spacing:.3e}", points.len())
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            CertGrid::Torus { points } => *points,
            CertGrid::Slice { points, .. } | CertGrid::Sphere { points, .. } => points.len(),
        }
    }

    fn theta(&self, k: usize) -> Vec<f64> {
        match self {
            CertGrid::Torus { points } => vec![k as f64 / *points as f64],
            CertGrid::Slice { points, .. } | CertGrid::Sphere { points, .. } => points[k].clone(),
        }
    }
}

fn sphere_area(d: usize) -> f64 {
    // |S^{d-1}| = 2 π^{d/2} / Γ(d/2)
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half)
}

/// `F'(μ)` on a grid. Each entry is one evaluated point `u` with its copy
/// tag (`sign`) and the `branch` it belongs to: `+1`/`-1` for the `w = ±1`
/// slices or the two sphere copies, `+1` for an untagged sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub points: Vec<Vec<f64>>,
    pub signs: Vec<f64>,
    pub branches: Vec<i8>,
    /// Index of the underlying grid point.
    pub grid_index: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridEvaluation {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn grid_points(spec: &ProblemSpec, grid: &CertGrid) -> Result<Vec<(Vec<f64>, f64, i8, usize)>> {
    let d = spec.dim();
    let family = spec.family();
    let n = grid.len();
    if n == 0 {
        return Err(Error::Config("certification grid is empty".into()));
    }
    let mut out = Vec::new();
    match (grid, family.homogeneity()) {
        (CertGrid::Torus { .. }, _) if !matches!(family, Family::SparseDeconvolution { .. }) => {
            return Err(Error::Config("torus grids apply to deconvolution only".into()))
        }
        (CertGrid::Torus { .. } | CertGrid::Slice { .. }, Homogeneity::PartialOne) => {
            for branch in [1i8, -1] {
                for k in 0..n {
                    let theta = grid.theta(k);
                    if theta.len() != d - 1 {
                        return Err(Error::Shape {
                            expected: d - 1,
                            got: theta.len(),
                        });
                    }
                    let mut u = Vec::with_capacity(d);
                    u.push(branch as f64);
                    u.extend(theta);
                    out.push((u, 1.0, branch, k));
                }
            }
        }
        (CertGrid::Sphere { .. }, Homogeneity::Two) => {
            let branches: &[i8] = if family.uses_signs() { &[1, -1] } else { &[1] };
            for &branch in branches {
                for k in 0..n {
                    let u = grid.theta(k);
                    if u.len() != d {
                        return Err(Error::Shape { expected: d, got: u.len() });
                    }
                    out.push((u, branch as f64, branch, k));
                }
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "grid kind does not match the homogeneity of {}",
                family.tag()
            )))
        }
    }
    Ok(out)
}

/// Pointwise `F'(μ)` on the grid's slices or sphere.
pub fn eval_fprime_on_grid(spec: &ProblemSpec, mu: &ParticleMeasure, grid: &CertGrid) -> Result<GridEvaluation> {
    let potential = spec.potential(mu)?;
    let pts = grid_points(spec, grid)?;
    let values = pts.iter().map(|(u, s, _, _)| potential.value(u, *s)).collect();
    let mut eval = GridEvaluation {
        points: Vec::with_capacity(pts.len()),
        signs: Vec::with_capacity(pts.len()),
        branches: Vec::with_capacity(pts.len()),
        grid_index: Vec::with_capacity(pts.len()),
        values,
    };
    for (u, s, b, k) in pts {
        eval.points.push(u);
        eval.signs.push(s);
        eval.branches.push(b);
        eval.grid_index.push(k);
    }
    Ok(eval)
}

/// The point at which a particle's `F'` value is checked, and the measure
/// of how much of the support it carries: `(sign w, θ)` with `q|w|` for
/// partially 1-homogeneous families, `u/|u|` with `q|u|²` otherwise.
fn normalized_particle(spec: &ProblemSpec, mu: &ParticleMeasure, i: usize) -> Option<(Vec<f64>, f64)> {
    let u = mu.position(i);
    match spec.family().homogeneity() {
        Homogeneity::PartialOne => {
            if u[0] == 0.0 {
                return None;
            }
            let mut p = u.to_vec();
            p[0] = u[0].signum();
            Some((p, mu.mass(i) * u[0].abs()))
        }
        Homogeneity::Two => {
            let r = norm(u);
            if r == 0.0 {
                return None;
            }
            Some((u.iter().map(|x| x / r).collect(), mu.mass(i) * r * r))
        }
    }
}

/// Whether evaluating `F'` on slices or spheres is exact for this problem.
fn slice_is_exact(spec: &ProblemSpec) -> bool {
    match spec.family().homogeneity() {
        Homogeneity::PartialOne => spec.regularizer() != Regularizer::SquaredNorm || spec.reg_weight() == 0.0,
        Homogeneity::Two => spec.regularizer() != Regularizer::AbsWeight || spec.reg_weight() == 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub grid_min: f64,
    /// Grid point (in particle coordinates) attaining `grid_min`.
    pub grid_argmin: Vec<f64>,
    pub support_max_abs: f64,
    pub support_size: usize,
    pub tolerance: f64,
    pub support_threshold: f64,
    pub pass: bool,
    pub grid: String,
    pub grid_points: usize,
    pub grid_spacing: f64,
    /// Largest gradient norm of `F'` over the grid.
    pub lipschitz_estimate: f64,
    /// `lipschitz_estimate · grid_spacing / 2`: how far below `grid_min`
    /// the continuum minimum may lie.
    pub lipschitz_slack: f64,
    /// False when `F'` on slices or spheres does not determine its sign
    /// elsewhere (non-homogeneous regularizer).
    pub slice_exact: bool,
}

impl CertificateReport {
    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "pass"
        } else {
            "fail"
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: grid_min = {:.6e}, support_max_abs = {:.6e} (tolerance {:.1e})",
            self.verdict(),
            self.grid_min,
            self.support_max_abs,
            self.tolerance
        )
    }
}

/// Grid relaxation of the optimality conditions `F'(μ) ≥ 0` and `F'(μ) = 0`
/// on the support of `μ`.
pub fn certify(
    spec: &ProblemSpec,
    mu: &ParticleMeasure,
    grid: &CertGrid,
    tolerance: f64,
    support_threshold: f64,
) -> Result<CertificateReport> {
    if !(tolerance > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    let eval = eval_fprime_on_grid(spec, mu, grid)?;
    let potential = spec.potential(mu)?;
    let (arg, grid_min) = eval
        .values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, v)| if *v < acc.1 { (k, *v) } else { acc });
    let mut support_max_abs: f64 = 0.0;
    let mut support_size = 0;
    for i in 0..mu.len() {
        if let Some((p, weight)) = normalized_particle(spec, mu, i) {
            if weight >= support_threshold {
                support_size += 1;
                support_max_abs = support_max_abs.max(potential.value(&p, mu.sign(i)).abs());
            }
        }
    }
    let lipschitz = lipschitz_on_grid(&potential, &eval);
    let spacing = grid.spacing();
    Ok(CertificateReport {
        grid_min,
        grid_argmin: eval.points[arg].clone(),
        support_max_abs,
        support_size,
        tolerance,
        support_threshold,
        pass: grid_min >= -tolerance && support_max_abs <= tolerance,
        grid: grid.describe(),
        grid_points: eval.values.len(),
        grid_spacing: spacing,
        lipschitz_estimate: lipschitz,
        lipschitz_slack: 0.5 * lipschitz * spacing,
        slice_exact: slice_is_exact(spec),
    })
}

/// Largest `|∇_θ F'|` (slices) or tangential-plus-radial gradient (sphere)
/// over the grid, skipping points where `F'` is not differentiable.
fn lipschitz_on_grid(potential: &Potential, eval: &GridEvaluation) -> f64 {
    let homogeneity = potential.spec().family().homogeneity();
    eval.points
        .iter()
        .zip(&eval.signs)
        .filter_map(|(u, s)| potential.gradient(u, *s).ok())
        .map(|g| match homogeneity {
            Homogeneity::PartialOne => norm(&g.grad[1..]),
            Homogeneity::Two => norm(&g.grad),
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeVerdict {
    /// `K` is empty: no direction of descent on the grid.
    Optimal,
    /// `K` is nonempty and some particle mass lies in the escape set.
    Escaping,
    /// `K` is nonempty but no particle mass lies in the escape set.
    StuckAtNonOptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeDiagnostics {
    pub eta: f64,
    pub grid_min: f64,
    /// `K⁺` (slices) or `K` on the sphere (first copy).
    pub sublevel_plus: Vec<bool>,
    /// `K⁻` (slices) or the second sphere copy; empty for untagged spheres.
    pub sublevel_minus: Vec<bool>,
    pub k_size: usize,
    pub escape_mass: f64,
    pub verdict: EscapeVerdict,
}

/// Default `η`: half of `max(0, −grid_min)`, at least `1e-6`.
pub fn default_eta(grid_min: f64) -> f64 {
    (0.5 * (-grid_min).max(0.0)).max(1e-6)
}

/// Sublevel sets `{F' ≤ −η}` and the particle mass inside the associated
/// escape set.
pub fn escape_set(spec: &ProblemSpec, mu: &ParticleMeasure, eta: Option<f64>, grid: &CertGrid) -> Result<EscapeDiagnostics> {
    let eval = eval_fprime_on_grid(spec, mu, grid)?;
    let grid_min = eval.min();
    let eta = eta.unwrap_or_else(|| default_eta(grid_min));
    if !(eta > 0.0) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let n = grid.len();
    let two_branches = eval.values.len() == 2 * n;
    let mut plus = vec![false; n];
    let mut minus = if two_branches { vec![false; n] } else { Vec::new() };
    for ((v, b), k) in eval.values.iter().zip(&eval.branches).zip(&eval.grid_index) {
        if *v <= -eta {
            if *b > 0 {
                plus[*k] = true;
            } else {
                minus[*k] = true;
            }
        }
    }
    let k_size = plus.iter().chain(&minus).filter(|x| **x).count();
    let spacing = grid.spacing();
    let mut escape_mass = 0.0;
    if k_size > 0 {
        for i in 0..mu.len() {
            let u = mu.position(i);
            let (branch, point) = match spec.family().homogeneity() {
                Homogeneity::PartialOne => {
                    if u[0] == 0.0 {
                        continue;
                    }
                    (u[0] > 0.0, u[1..].to_vec())
                }
                Homogeneity::Two => {
                    let r = norm(u);
                    if r == 0.0 {
                        continue;
                    }
                    (!two_branches || mu.sign(i) > 0.0, u.iter().map(|x| x / r).collect())
                }
            };
            let mask = if branch { &plus } else { &minus };
            let near = (0..n).any(|k| mask[k] && grid_distance(grid, &point, k) <= spacing);
            if near {
                escape_mass += mu.mass(i);
            }
        }
    }
    let verdict = if k_size == 0 {
        EscapeVerdict::Optimal
    } else if escape_mass > 0.0 {
        EscapeVerdict::Escaping
    } else {
        EscapeVerdict::StuckAtNonOptimal
    };
    Ok(EscapeDiagnostics {
        eta,
        grid_min,
        sublevel_plus: plus,
        sublevel_minus: minus,
        k_size,
        escape_mass: escape_mass.min(1.0),
        verdict,
    })
}

fn grid_distance(grid: &CertGrid, point: &[f64], k: usize) -> f64 {
    match grid {
        CertGrid::Torus { points } => {
            let d = (point[0] - k as f64 / *points as f64).rem_euclid(1.0);
            d.min(1.0 - d)
        }
        CertGrid::Slice { points, .. } | CertGrid::Sphere { points, .. } => {
            point.iter().zip(&points[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        }
    }
}

/// A probe point for gradient checks: position and copy tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub u: Vec<f64>,
    pub sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub points: usize,
    /// Over probes: `f_prime_grad` against central differences of `f_prime`.
    pub max_rel_error_fprime: f64,
    /// Over particles of `μ`: `velocity` against `−m ∇F_m` by central
    /// differences of the objective.
    pub max_rel_error_velocity: f64,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_fprime.max(self.max_rel_error_velocity)
    }
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, 1e-2)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-2, f64::max);
    diff / scale
}

/// Compares analytic gradients with central differences at step `1e-5`:
/// `f_prime_grad` at every probe, and the velocity field at every particle
/// of `mu`. All points must be differentiable points (see
/// [`sample_probes`]).
pub fn finite_difference_check(spec: &ProblemSpec, mu: &ParticleMeasure, probes: &[Probe]) -> Result<FdReport> {
    let potential = spec.potential(mu)?;
    let h = FD_STEP;
    let mut worst_fp: f64 = 0.0;
    for p in probes {
        let analytic = potential.gradient(&p.u, p.sign)?.grad;
        let mut fd = vec![0.0; p.u.len()];
        let mut x = p.u.clone();
        for j in 0..x.len() {
            x[j] = p.u[j] + h;
            let a = potential.value(&x, p.sign);
            x[j] = p.u[j] - h;
            let b = potential.value(&x, p.sign);
            x[j] = p.u[j];
            fd[j] = (a - b) / (2.0 * h);
        }
        worst_fp = worst_fp.max(relative_error(&analytic, &fd));
    }

    let velocity = spec.velocity(mu)?;
    let mut worst_v: f64 = 0.0;
    let mut shifted = mu.clone();
    let d = mu.dim();
    for i in 0..mu.len() {
        let mut fd = vec![0.0; d];
        for j in 0..d {
            let k = i * d + j;
            let x0 = mu.positions()[k];
            shifted.positions_mut()[k] = x0 + h;
            let a = spec.objective(&shifted)?;
            shifted.positions_mut()[k] = x0 - h;
            let b = spec.objective(&shifted)?;
            shifted.positions_mut()[k] = x0;
            fd[j] = -(a - b) / (2.0 * h) / mu.mass(i);
        }
        worst_v = worst_v.max(relative_error(velocity.get(i), &fd));
    }
    Ok(FdReport {
        points: probes.len() + mu.len(),
        max_rel_error_fprime: worst_fp,
        max_rel_error_velocity: worst_v,
    })
}

/// Minimum distance from activation kinks and from `w = 0` accepted by
/// [`sample_probes`].
pub const PROBE_MARGIN: f64 = 1e-3;

/// `n` random differentiable points for the family, drawn by rejection so
/// that a central difference of step `1e-5` never crosses a kink of the
/// ReLU features or of `|w|`.
pub fn sample_probes(spec: &ProblemSpec, n: usize, seed: u64) -> Vec<Probe> {
    let mut rng = seeds::stream(seed, seeds::PROBE);
    let d = spec.dim();
    let family = spec.family();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u: Vec<f64> = match family {
            Family::SparseDeconvolution { .. } => vec![rng.sample::<f64, _>(StandardNormal) * 2.0, rng.random::<f64>()],
            _ => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
        };
        if family.has_weight() && u[0].abs() < PROBE_MARGIN {
            continue;
        }
        if spec.kink_margin(&u) < PROBE_MARGIN {
            continue;
        }
        let sign = if family.uses_signs() && rng.random::<bool>() { -1.0 } else { 1.0 };
        out.push(Probe { u, sign });
    }
    out
}

/// A random measure of `m` differentiable particles (see [`sample_probes`]).
pub fn sample_measure(spec: &ProblemSpec, m: usize, seed: u64) -> Result<ParticleMeasure> {
    let probes = sample_probes(spec, m, seed ^ 0x9e37_79b9_7f4a_7c15);
    let mu = ParticleMeasure::uniform(probes.iter().map(|p| p.u.clone()).collect())?;
    if spec.family().uses_signs() {
        mu.with_signs(probes.iter().map(|p| p.sign as i8).collect())
    } else {
        Ok(mu)
    }
}
