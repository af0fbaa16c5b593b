use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{ParticleMeasure, SignedAtomicMeasure};
use crate::error::{Error, Result};

/// Largest atom count accepted by the exact assignment solver.
pub const MAX_ASSIGNMENT_ATOMS: usize = 512;

/// Quadratic Wasserstein distance between two probability measures.
///
/// In one dimension any masses are allowed and the sorted-quantile coupling
/// is used. In higher dimension both measures must have the same number of
/// atoms with uniform masses; the optimal coupling is then a permutation,
/// found by an exact linear assignment solve.
pub fn w2_distance(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension(format!(
            "cannot compare measures on R^{} and R^{}",
            mu.dim(),
            nu.dim()
        )));
    }
    for m in [mu, nu] {
        if m.is_empty() || !m.is_probability() {
            return Err(Error::InvalidMeasure(format!(
                "W2 needs probability measures, got total mass {}",
                m.total_mass()
            )));
        }
    }
    if mu.dim() == 1 {
        return Ok(quantile_w2_squared(mu, nu).max(0.0).sqrt());
    }
    if mu.len() != nu.len() || !mu.has_uniform_masses() || !nu.has_uniform_masses() {
        return Err(Error::Unsupported(
            "W2 in dimension >= 2 requires equal atom counts with uniform masses".into(),
        ));
    }
    let m = mu.len();
    if m > MAX_ASSIGNMENT_ATOMS {
        return Err(Error::Unsupported(format!(
            "exact assignment limited to {MAX_ASSIGNMENT_ATOMS} atoms, got {m}"
        )));
    }
    let mut cost = Vec::with_capacity(m * m);
    for i in 0..m {
        let x = mu.position(i);
        for j in 0..m {
            cost.push(squared_distance(x, nu.position(j)));
        }
    }
    let (rows, cols) = lsap::solve(m, m, &cost, false)
        .map_err(|e| Error::Unsupported(format!("assignment solver failed: {e:?}")))?;
    let total: f64 = rows.iter().zip(&cols).map(|(&i, &j)| cost[i * m + j]).sum();
    Ok((total / m as f64).max(0.0).sqrt())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sorted_atoms(mu: &ParticleMeasure) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = (0..mu.len()).map(|i| (mu.position(i)[0], mu.mass(i))).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// Walks both quantile functions and integrates `|F⁻¹ − G⁻¹|²`.
fn quantile_w2_squared(mu: &ParticleMeasure, nu: &ParticleMeasure) -> f64 {
    let a = sorted_atoms(mu);
    let b = sorted_atoms(nu);
    // Normalize so that rounding in the total masses cannot leave mass behind.
    let ta: f64 = a.iter().map(|x| x.1).sum();
    let tb: f64 = b.iter().map(|x| x.1).sum();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1 / ta, b[0].1 / tb);
    let mut total = 0.0;
    loop {
        let step = ra.min(rb);
        let d = a[i].0 - b[j].0;
        total += step * d * d;
        ra -= step;
        rb -= step;
        if ra <= 0.0 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1 / ta;
        }
        if rb <= 0.0 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1 / tb;
        }
    }
    total
}

/// Discretization used by [`bl_distance_grid`].
#[derive(Clone, Debug)]
pub enum BlGrid {
    /// Sorted node coordinates on a line.
    Line(Vec<f64>),
    /// Tensor grid `xs × ys`, triangulated along cell diagonals.
    Rect { xs: Vec<f64>, ys: Vec<f64> },
}

/// Number of facets of the polygon inscribed in the unit disk that bounds
/// triangle gradients in the two-dimensional program.
const DISK_FACETS: usize = 16;

/// Lower estimate of `‖μ − ν‖_BL`: maximizes `∫ φ d(μ − ν)` over continuous
/// piecewise-linear `φ` on the grid with `|φ| ≤ 1` and Lipschitz constant
/// at most one. Any such `φ` is admissible in the supremum, so the value
/// never exceeds the true norm; it converges to it as the grid is refined.
pub fn bl_distance_grid(mu: &SignedAtomicMeasure, nu: &SignedAtomicMeasure, grid: &BlGrid) -> Result<f64> {
    let diff = mu.difference(nu)?;
    if diff.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "BL estimate supports dimension 1 or 2, got {}",
            diff.dim()
        )));
    }
    match grid {
        BlGrid::Line(nodes) => {
            if diff.dim() != 1 && !diff.is_empty() {
                return Err(Error::Dimension("line grid used with two-dimensional measures".into()));
            }
            bl_line(&diff, nodes)
        }
        BlGrid::Rect { xs, ys } => {
            if diff.dim() != 2 && !diff.is_empty() {
                return Err(Error::Dimension("rectangular grid used with one-dimensional measures".into()));
            }
            bl_rect(&diff, xs, ys)
        }
    }
}

fn check_sorted(nodes: &[f64]) -> Result<()> {
    if nodes.is_empty() || nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("grid nodes must be non-empty and strictly increasing".into()));
    }
    Ok(())
}

/// Cell index `k` and local coordinate `s ∈ [0, 1]` with
/// `x = (1 − s) nodes[k] + s nodes[k + 1]`.
fn locate(nodes: &[f64], x: f64) -> Result<(usize, f64)> {
    let last = nodes.len() - 1;
    if x < nodes[0] || x > nodes[last] {
        return Err(Error::Config(format!(
            "atom at {x} lies outside the grid [{}, {}]",
            nodes[0], nodes[last]
        )));
    }
    if last == 0 {
        return Ok((0, 0.0));
    }
    let k = nodes.partition_point(|g| *g <= x).saturating_sub(1).min(last - 1);
    Ok((k, (x - nodes[k]) / (nodes[k + 1] - nodes[k])))
}

fn bl_line(diff: &SignedAtomicMeasure, nodes: &[f64]) -> Result<f64> {
    check_sorted(nodes)?;
    let mut objective = vec![0.0; nodes.len()];
    for a in 0..diff.len() {
        let (k, s) = locate(nodes, diff.location(a)[0])?;
        let c = diff.weight(a);
        objective[k] += c * (1.0 - s);
        if s > 0.0 {
            objective[k + 1] += c * s;
        }
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective.iter().map(|c| lp.add_var(*c, (-1.0, 1.0))).collect();
    for k in 0..nodes.len().saturating_sub(1) {
        let h = nodes[k + 1] - nodes[k];
        lp.add_constraint(&[(vars[k + 1], 1.0), (vars[k], -1.0)], ComparisonOp::Le, h);
        lp.add_constraint(&[(vars[k + 1], 1.0), (vars[k], -1.0)], ComparisonOp::Ge, -h);
    }
    let solution = lp
        .solve()
        .map_err(|e| Error::Unsupported(format!("BL linear program failed: {e}")))?;
    Ok(solution.objective().max(0.0))
}

fn bl_rect(diff: &SignedAtomicMeasure, xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_sorted(xs)?;
    check_sorted(ys)?;
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Config("rectangular grid needs at least two nodes per axis".into()));
    }
    let nx = xs.len();
    let node = |i: usize, j: usize| j * nx + i;
    let mut objective = vec![0.0; nx * ys.len()];
    for a in 0..diff.len() {
        let p = diff.location(a);
        let (i, s) = locate(xs, p[0])?;
        let (j, t) = locate(ys, p[1])?;
        let c = diff.weight(a);
        if s + t <= 1.0 {
            objective[node(i, j)] += c * (1.0 - s - t);
            objective[node(i + 1, j)] += c * s;
            objective[node(i, j + 1)] += c * t;
        } else {
            objective[node(i + 1, j + 1)] += c * (s + t - 1.0);
            objective[node(i, j + 1)] += c * (1.0 - s);
            objective[node(i + 1, j)] += c * (1.0 - t);
        }
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective.iter().map(|c| lp.add_var(*c, (-1.0, 1.0))).collect();
    let radius = (std::f64::consts::PI / DISK_FACETS as f64).cos();
    let normals: Vec<(f64, f64)> = (0..DISK_FACETS)
        .map(|k| {
            let a = (2 * k + 1) as f64 * std::f64::consts::PI / DISK_FACETS as f64;
            (a.cos(), a.sin())
        })
        .collect();
    for j in 0..ys.len() - 1 {
        let hy = ys[j + 1] - ys[j];
        for i in 0..nx - 1 {
            let hx = xs[i + 1] - xs[i];
            // gradient = ((φ_x1 − φ_x0)/hx, (φ_y1 − φ_y0)/hy) on each triangle
            let triangles = [
                ((node(i + 1, j), node(i, j)), (node(i, j + 1), node(i, j))),
                ((node(i + 1, j + 1), node(i, j + 1)), (node(i + 1, j + 1), node(i + 1, j))),
            ];
            for ((x1, x0), (y1, y0)) in triangles {
                for &(nx_, ny_) in &normals {
                    let mut row = vec![(vars[x1], nx_ / hx), (vars[x0], -nx_ / hx)];
                    row.push((vars[y1], ny_ / hy));
                    row.push((vars[y0], -ny_ / hy));
                    merge_terms(&mut row);
                    lp.add_constraint(&row, ComparisonOp::Le, radius);
                }
            }
        }
    }
    let solution = lp
        .solve()
        .map_err(|e| Error::Unsupported(format!("BL linear program failed: {e}")))?;
    Ok(solution.objective().max(0.0))
}

fn merge_terms(row: &mut Vec<(minilp::Variable, f64)>) {
    row.sort_by_key(|(v, _)| v.idx());
    row.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
}
