//! Atomic measures, the lifting projections `h1`/`h2`, and transport-type
//! distances used to compare particle states.
//!
//! A [`ParticleMeasure`] is the discretization of a nonnegative measure on
//! `Ω ⊂ ℝ^d` by `m` atoms. Positions are stored row-major in one flat buffer.
//! For the signed-square ReLU family each atom additionally carries an
//! immutable `±1` tag selecting which copy of `ℝ^d` it lives in.

mod io;
mod transport;

pub use transport::{bl_distance_grid, w2_distance, BlGrid};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a probability measure.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "io::MeasureRepr", into = "io::MeasureRepr")]
pub struct ParticleMeasure {
    dim: usize,
    positions: Vec<f64>,
    masses: Vec<f64>,
    signs: Option<Vec<i8>>,
}

impl ParticleMeasure {
    /// Builds a measure from one position vector per atom.
    pub fn new(positions: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        let dim = positions
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidMeasure("a measure needs at least one atom".into()))?;
        if positions.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("ragged position list".into()));
        }
        Self::from_flat(dim, positions.concat(), masses)
    }

    pub fn from_flat(dim: usize, positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("ambient dimension must be positive".into()));
        }
        if masses.is_empty() {
            return Err(Error::InvalidMeasure("a measure needs at least one atom".into()));
        }
        if positions.len() != dim * masses.len() {
            return Err(Error::Shape {
                expected: dim * masses.len(),
                got: positions.len(),
            });
        }
        if let Some(bad) = masses.iter().find(|q| !(**q >= 0.0) || !q.is_finite()) {
            return Err(Error::InvalidMeasure(format!("mass {bad} is not a finite nonnegative number")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite position".into()));
        }
        Ok(Self {
            dim,
            positions,
            masses,
            signs: None,
        })
    }

    /// `m` atoms of mass `1/m` each.
    pub fn uniform(positions: Vec<Vec<f64>>) -> Result<Self> {
        let m = positions.len();
        Self::new(positions, vec![1.0 / m as f64; m])
    }

    pub fn uniform_flat(dim: usize, positions: Vec<f64>) -> Result<Self> {
        let m = positions.len() / dim.max(1);
        Self::from_flat(dim, positions, vec![1.0 / m as f64; m])
    }

    /// The measure with no atoms. Only produced by projections (`h2` of a
    /// measure concentrated at the origin); flows never start from it.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            masses: Vec::new(),
            signs: None,
        }
    }

    /// Attaches `±1` copy tags, one per atom.
    pub fn with_signs(mut self, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: signs.len(),
            });
        }
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::InvalidMeasure("sign tags must be +1 or -1".into()));
        }
        self.signs = Some(signs);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn position_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Copy tag of atom `i`; `+1` when the measure carries no tags.
    pub fn sign(&self, i: usize) -> f64 {
        self.signs.as_ref().map_or(1.0, |s| f64::from(s[i]))
    }

    pub fn signs(&self) -> Option<&[i8]> {
        self.signs.as_deref()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= PROBABILITY_TOL
    }

    /// True when all masses agree with `1/m` to within rounding.
    pub fn has_uniform_masses(&self) -> bool {
        let target = 1.0 / self.len() as f64;
        self.masses.iter().all(|q| (q - target).abs() <= PROBABILITY_TOL * target.max(1.0))
    }

    /// Largest Euclidean norm over atoms.
    pub fn max_norm(&self) -> f64 {
        self.position_rows().map(norm).fold(0.0, f64::max)
    }

    /// Splits every atom into `k` copies of mass `q/k`; the represented
    /// distribution is unchanged.
    pub fn replicate(&self, k: usize) -> Self {
        let mut positions = Vec::with_capacity(self.positions.len() * k);
        let mut masses = Vec::with_capacity(self.len() * k);
        let mut signs = self.signs.as_ref().map(|_| Vec::with_capacity(self.len() * k));
        for i in 0..self.len() {
            for _ in 0..k {
                positions.extend_from_slice(self.position(i));
                masses.push(self.masses[i] / k as f64);
                if let (Some(out), Some(src)) = (signs.as_mut(), self.signs.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        Self {
            dim: self.dim,
            positions,
            masses,
            signs,
        }
    }

    /// Mixture `Σ_k c_k μ_k` of measures on the same space (atoms concatenated).
    pub fn mixture(parts: &[(f64, &ParticleMeasure)]) -> Result<Self> {
        let dim = parts
            .first()
            .map(|(_, m)| m.dim)
            .ok_or_else(|| Error::InvalidMeasure("empty mixture".into()))?;
        let mut positions = Vec::new();
        let mut masses = Vec::new();
        for (c, mu) in parts {
            if mu.dim != dim {
                return Err(Error::Dimension("mixture of measures of different dimension".into()));
            }
            if *c < 0.0 {
                return Err(Error::InvalidMeasure("negative mixture coefficient".into()));
            }
            positions.extend_from_slice(&mu.positions);
            masses.extend(mu.masses.iter().map(|q| c * q));
        }
        Self::from_flat(dim, positions, masses)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A signed atomic measure `Σ_j c_j δ_{θ_j}` on `Θ ⊂ ℝ^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedAtomicMeasure {
    dim: usize,
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl SignedAtomicMeasure {
    pub fn new(locations: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = locations.first().map_or(1, Vec::len);
        if locations.len() != weights.len() {
            return Err(Error::Shape {
                expected: weights.len(),
                got: locations.len(),
            });
        }
        if locations.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("ragged location list".into()));
        }
        Ok(Self {
            dim,
            locations: locations.concat(),
            weights,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            locations: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn location(&self, j: usize) -> &[f64] {
        &self.locations[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_j |c_j|`; equals `|ν|(Θ)` when the locations are pairwise distinct.
    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|c| c.abs()).sum()
    }

    /// `∫ φ dν`.
    pub fn integrate(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|j| self.weights[j] * phi(self.location(j))).sum()
    }

    /// `ν − other`, atoms concatenated.
    pub fn difference(&self, other: &SignedAtomicMeasure) -> Result<Self> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(Error::Dimension("measures live in different dimensions".into()));
        }
        let dim = if self.is_empty() { other.dim } else { self.dim };
        let mut locations = self.locations.clone();
        locations.extend_from_slice(&other.locations);
        let mut weights = self.weights.clone();
        weights.extend(other.weights.iter().map(|c| -c));
        Ok(Self {
            dim,
            locations,
            weights,
        })
    }
}

/// Projects a lifted measure on `ℝ × Θ` to the signed measure
/// `h¹(μ)(B) = ∫ w dμ(w, B)`. The first coordinate is the weight.
///
/// Atoms whose `θ` coordinates are bitwise identical are merged.
pub fn h1_project(mu: &ParticleMeasure) -> Result<SignedAtomicMeasure> {
    if mu.dim() < 2 {
        return Err(Error::Dimension(format!(
            "h1 projection needs a weight coordinate plus at least one position coordinate, got d = {}",
            mu.dim()
        )));
    }
    let k = mu.dim() - 1;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut locations: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..mu.len() {
        let u = mu.position(i);
        let theta = &u[1..];
        let key: Vec<u64> = theta.iter().map(|x| x.to_bits()).collect();
        let contribution = u[0] * mu.mass(i);
        match index.get(&key) {
            Some(&j) => weights[j] += contribution,
            None => {
                index.insert(key, weights.len());
                locations.extend_from_slice(theta);
                weights.push(contribution);
            }
        }
    }
    Ok(SignedAtomicMeasure {
        dim: k,
        locations,
        weights,
    })
}

/// Projects a measure on `ℝ^d` to the sphere: `(u, q) ↦ (u/|u|, q|u|²)`;
/// atoms at the origin contribute nothing.
pub fn h2_project(mu: &ParticleMeasure) -> Result<ParticleMeasure> {
    if mu.dim() < 2 {
        return Err(Error::Dimension(format!("h2 projection needs d >= 2, got {}", mu.dim())));
    }
    let mut positions = Vec::new();
    let mut masses = Vec::new();
    let mut signs = Vec::new();
    for i in 0..mu.len() {
        let u = mu.position(i);
        let r = norm(u);
        if r == 0.0 {
            continue;
        }
        positions.extend(u.iter().map(|x| x / r));
        masses.push(mu.mass(i) * r * r);
        signs.push(mu.signs().map_or(1, |s| s[i]));
    }
    if masses.is_empty() {
        return Ok(ParticleMeasure::empty(mu.dim()));
    }
    let out = ParticleMeasure::from_flat(mu.dim(), positions, masses)?;
    if mu.signs().is_some() {
        out.with_signs(signs)
    } else {
        Ok(out)
    }
}

/// `∫ |w| dμ` for a lifted measure, an upper bound on `|h¹(μ)|(Θ)`.
pub fn total_variation_of_lift(mu: &ParticleMeasure) -> f64 {
    (0..mu.len()).map(|i| mu.mass(i) * mu.position(i)[0].abs()).sum()
}
