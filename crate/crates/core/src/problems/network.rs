//! Single-hidden-layer feature maps evaluated on a finite sample set.
//!
//! Inputs are augmented as `z = (x, 1)`. Sigmoid and classic ReLU particles
//! are `(w, θ)` with `θ ∈ ℝ^{p+1}`; signed-square ReLU particles are `θ`
//! alone with a `±1` copy tag and use `s(θ) = θ|θ|` entrywise.

use super::Family;
use crate::error::{Error, Result};

/// Borrowed samples: `features` is row-major `n × p`.
#[derive(Clone, Copy, Debug)]
pub struct SampleSet<'a> {
    pub features: &'a [f64],
    pub labels: &'a [f64],
    pub input_dim: usize,
}

impl<'a> SampleSet<'a> {
    pub fn new(features: &'a [f64], labels: &'a [f64], input_dim: usize) -> Result<Self> {
        if features.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                expected: labels.len() * input_dim,
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, k: usize) -> &'a [f64] {
        &self.features[k * self.input_dim..(k + 1) * self.input_dim]
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn signed_square(t: f64) -> f64 {
    t * t.abs()
}

#[inline]
fn heaviside(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn affine(theta: &[f64], x: &[f64]) -> f64 {
    let p = x.len();
    theta[..p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta[p]
}

/// Effective first-layer weights: `θ` or `s(θ)`.
fn effective_theta(family: &Family, u: &[f64]) -> Vec<f64> {
    match family {
        Family::ReluNetSignedSquare { .. } => u.iter().map(|t| signed_square(*t)).collect(),
        _ => u[1..].to_vec(),
    }
}

/// Errors at the non-differentiable points of the classic ReLU map.
pub fn check_differentiable(family: &Family, u: &[f64]) -> Result<()> {
    if let Family::ReluNetClassic { .. } = family {
        if u[0] != 0.0 && u[1..].iter().all(|t| *t == 0.0) {
            return Err(Error::NonDifferentiable(format!(
                "classic ReLU feature map has a discontinuous derivative at theta = 0 with w = {}",
                u[0]
            )));
        }
    }
    Ok(())
}

/// `out[k] = Φ(u)(x_k)`.
pub fn evaluate(family: &Family, u: &[f64], sign: f64, set: &SampleSet, out: &mut [f64]) {
    let th = effective_theta(family, u);
    for (k, slot) in out.iter_mut().enumerate().take(set.len()) {
        let a = affine(&th, set.row(k));
        *slot = match family {
            Family::SigmoidNet { .. } => u[0] * sigmoid(a),
            Family::ReluNetClassic { .. } => u[0] * a.max(0.0),
            Family::ReluNetSignedSquare { .. } => sign * a.max(0.0),
            Family::SparseDeconvolution { .. } => unreachable!("not a network family"),
        };
    }
}

/// `grad[j] += Σ_k gw[k] ∂_j Φ(u)(x_k)` where `gw` already carries the
/// quadrature weights.
pub fn accumulate_gradient(
    family: &Family,
    u: &[f64],
    sign: f64,
    set: &SampleSet,
    gw: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    check_differentiable(family, u)?;
    let th = effective_theta(family, u);
    let p = set.input_dim;
    match family {
        Family::SigmoidNet { .. } | Family::ReluNetClassic { .. } => {
            let w = u[0];
            let mut inner = vec![0.0; p + 1];
            let mut dw = 0.0;
            for (k, g) in gw.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let x = set.row(k);
                let a = affine(&th, x);
                let (act, slope) = match family {
                    Family::SigmoidNet { .. } => {
                        let s = sigmoid(a);
                        (s, s * (1.0 - s))
                    }
                    _ => (a.max(0.0), heaviside(a)),
                };
                dw += g * act;
                let c = g * slope;
                if c != 0.0 {
                    for (acc, xi) in inner.iter_mut().zip(x) {
                        *acc += c * xi;
                    }
                    inner[p] += c;
                }
            }
            grad[0] += dw;
            for (gj, v) in grad[1..].iter_mut().zip(&inner) {
                *gj += w * v;
            }
        }
        Family::ReluNetSignedSquare { .. } => {
            let mut inner = vec![0.0; p + 1];
            for (k, g) in gw.iter().enumerate() {
                let x = set.row(k);
                if *g == 0.0 || affine(&th, x) <= 0.0 {
                    continue;
                }
                for (acc, xi) in inner.iter_mut().zip(x) {
                    *acc += g * xi;
                }
                inner[p] += g;
            }
            for (j, gj) in grad.iter_mut().enumerate() {
                *gj += sign * 2.0 * u[j].abs() * inner[j];
            }
        }
        Family::SparseDeconvolution { .. } => unreachable!("not a network family"),
    }
    Ok(())
}

/// Columns `∂_j Φ(u)` sampled on the set.
pub fn jacobian(family: &Family, u: &[f64], sign: f64, set: &SampleSet) -> Result<Vec<Vec<f64>>> {
    check_differentiable(family, u)?;
    let th = effective_theta(family, u);
    let p = set.input_dim;
    let d = u.len();
    let mut cols = vec![vec![0.0; set.len()]; d];
    for k in 0..set.len() {
        let x = set.row(k);
        let a = affine(&th, x);
        let z = |i: usize| if i < p { x[i] } else { 1.0 };
        match family {
            Family::SigmoidNet { .. } | Family::ReluNetClassic { .. } => {
                let (act, slope) = match family {
                    Family::SigmoidNet { .. } => {
                        let s = sigmoid(a);
                        (s, s * (1.0 - s))
                    }
                    _ => (a.max(0.0), heaviside(a)),
                };
                cols[0][k] = act;
                for i in 0..=p {
                    cols[i + 1][k] = u[0] * slope * z(i);
                }
            }
            Family::ReluNetSignedSquare { .. } => {
                let h = heaviside(a);
                for i in 0..=p {
                    cols[i][k] = sign * h * 2.0 * u[i].abs() * z(i);
                }
            }
            Family::SparseDeconvolution { .. } => unreachable!("not a network family"),
        }
    }
    Ok(cols)
}

/// Smallest `|s(θ)·z_k|` (or `|θ·z_k|`) over the set: distance to the
/// activation kinks of ReLU features, used to keep finite-difference
/// probes away from them.
pub fn kink_margin(family: &Family, u: &[f64], set: &SampleSet) -> f64 {
    let th = effective_theta(family, u);
    (0..set.len())
        .map(|k| affine(&th, set.row(k)).abs())
        .fold(f64::INFINITY, f64::min)
}
