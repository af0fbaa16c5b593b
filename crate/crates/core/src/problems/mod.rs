//! Problem families `F(μ) = R(∫Φ dμ) + ∫V dμ`: feature maps and their
//! differentials, losses, regularizers, and the derived objective,
//! first variation `F'(μ)` and particle velocity field.
//!
//! Elements of the Hilbert space are represented by samples on a fixed
//! quadrature ([`FunctionSample`]): the `n`-point torus grid for
//! deconvolution, the empirical dataset for networks.

mod config;
pub(crate) mod deconv;
pub(crate) mod network;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use config::{load_dataset_csv, DataSource, ProblemConfig};
pub use deconv::{kernel as dirichlet_kernel, kernel_derivative as dirichlet_kernel_derivative};
pub use network::{sigmoid, signed_square, SampleSet};

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use deconv::Deconvolution;

/// A function sampled on a quadrature with nonnegative weights summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSample {
    values: Vec<f64>,
    quad_weights: Arc<[f64]>,
}

impl FunctionSample {
    pub fn new(values: Vec<f64>, quad_weights: Arc<[f64]>) -> Result<Self> {
        if values.len() != quad_weights.len() {
            return Err(Error::Shape {
                expected: quad_weights.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, quad_weights })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `⟨f, g⟩ = Σ_k ω_k f_k g_k`.
    pub fn inner(&self, other: &FunctionSample) -> Result<f64> {
        if other.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .quad_weights
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a * b))
            .sum())
    }

    pub fn norm_squared(&self) -> f64 {
        self.quad_weights.iter().zip(&self.values).map(|(w, a)| w * a * a).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/2λ) Σ ω (f − y)²`.
    #[default]
    Quadratic,
    /// `Σ ω log(1 + exp(−y f))` with labels in `{−1, +1}`.
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// `V(w, θ) = |w|`.
    AbsWeight,
    /// `V = |θ|²` on the non-weight coordinates.
    SquaredNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Homogeneity {
    /// `Φ` and `V` positively 1-homogeneous in the weight coordinate.
    PartialOne,
    /// `Φ` and `V` positively 2-homogeneous in the whole particle.
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Particles `(w, θ)` on `ℝ × 𝕋`, `Φ(w,θ) = w ψ(· − θ)`.
    SparseDeconvolution {
        #[serde(default = "default_order")]
        order: usize,
    },
    /// Particles `(w, θ)`, `Φ(w,θ)(x) = w σ(θ·(x,1))`.
    SigmoidNet { input_dim: usize },
    /// Particles `θ` with a `±1` tag, `Φ(θ)(x) = ± relu(s(θ)·(x,1))`.
    ReluNetSignedSquare { input_dim: usize },
    /// Particles `(w, θ)`, `Φ(w,θ)(x) = w relu(θ·(x,1))`.
    ReluNetClassic { input_dim: usize },
}

fn default_order() -> usize {
    7
}

impl Family {
    pub fn particle_dim(&self) -> usize {
        match self {
            Family::SparseDeconvolution { .. } => 2,
            Family::SigmoidNet { input_dim } | Family::ReluNetClassic { input_dim } => input_dim + 2,
            Family::ReluNetSignedSquare { input_dim } => input_dim + 1,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Family::SparseDeconvolution { .. } => None,
            Family::SigmoidNet { input_dim }
            | Family::ReluNetClassic { input_dim }
            | Family::ReluNetSignedSquare { input_dim } => Some(*input_dim),
        }
    }

    pub fn homogeneity(&self) -> Homogeneity {
        match self {
            Family::SparseDeconvolution { .. } | Family::SigmoidNet { .. } => Homogeneity::PartialOne,
            Family::ReluNetSignedSquare { .. } | Family::ReluNetClassic { .. } => Homogeneity::Two,
        }
    }

    /// Whether coordinate 0 of a particle is an output weight `w`.
    pub fn has_weight(&self) -> bool {
        !matches!(self, Family::ReluNetSignedSquare { .. })
    }

    pub fn is_network(&self) -> bool {
        !matches!(self, Family::SparseDeconvolution { .. })
    }

    pub fn uses_signs(&self) -> bool {
        matches!(self, Family::ReluNetSignedSquare { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Family::SparseDeconvolution { .. } => "sparse_deconvolution",
            Family::SigmoidNet { .. } => "sigmoid_net",
            Family::ReluNetSignedSquare { .. } => "relu_net_signed_square",
            Family::ReluNetClassic { .. } => "relu_net_classic",
        }
    }

    pub fn default_regularizer(&self) -> Regularizer {
        match self {
            Family::SparseDeconvolution { .. } => Regularizer::AbsWeight,
            _ => Regularizer::None,
        }
    }
}

#[derive(Clone, Debug)]
enum Observations {
    Signal(Deconvolution),
    Samples { features: Vec<f64>, labels: Vec<f64> },
}

/// An immutable problem instance: family, loss, regularizer and data.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    family: Family,
    loss: LossKind,
    lambda: f64,
    regularizer: Regularizer,
    reg_weight: f64,
    data: Observations,
    quad_weights: Arc<[f64]>,
}

/// `∂F'(μ)(u)` information returned by [`ProblemSpec::f_prime_grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct FPrimeGradient {
    pub grad: Vec<f64>,
    /// False when `V` is not differentiable at `u`; `grad` then uses the
    /// minimal-norm element of `∂V(u)`.
    pub differentiable: bool,
}

/// Per-particle velocities, row-major `m × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    dim: usize,
    values: Vec<f64>,
}

impl VelocityField {
    pub(crate) fn from_flat(dim: usize, values: Vec<f64>) -> Self {
        Self { dim, values }
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ_i q_i |v_i|²`.
    pub fn mean_squared(&self, masses: &[f64]) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .zip(masses)
            .map(|(v, q)| q * v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Smooth part of the particle objective at a state: the loss value and
/// the unregularized velocities `ṽ(u_i) = −[⟨R'(∫Φdμ), ∂_jΦ(u_i)⟩]_j`.
#[derive(Clone, Debug)]
pub struct SmoothEval {
    pub loss: f64,
    pub velocity: Vec<f64>,
}

/// `F'(μ)` with the loss-gradient representer `R'(∫Φ dμ)` precomputed, so
/// evaluating it at many points is cheap.
#[derive(Clone, Debug)]
pub struct Potential<'a> {
    spec: &'a ProblemSpec,
    repr: PotentialRepr<'a>,
}

#[derive(Clone, Debug)]
enum PotentialRepr<'a> {
    Fourier(Vec<Complex64>),
    Samples { weighted: Vec<f64>, set: SampleSet<'a> },
}

impl ProblemSpec {
    /// Deconvolution of `target` (sampled on the uniform `n`-point torus
    /// grid) with a Dirichlet kernel of the given order, quadratic loss with
    /// parameter `lambda` and `V = |w|`.
    pub fn deconvolution(target: Vec<f64>, order: usize, lambda: f64) -> Result<Self> {
        let n = target.len();
        let data = Deconvolution::new(order, target)?;
        Self::build(
            Family::SparseDeconvolution { order },
            LossKind::Quadratic,
            lambda,
            Regularizer::AbsWeight,
            1.0,
            Observations::Signal(data),
            n,
        )
    }

    /// Network family on an empirical dataset (`features` row-major `N × p`).
    pub fn network(family: Family, features: Vec<f64>, labels: Vec<f64>, loss: LossKind) -> Result<Self> {
        let p = family
            .input_dim()
            .ok_or_else(|| Error::Config("deconvolution is not a network family".into()))?;
        if labels.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        SampleSet::new(&features, &labels, p)?;
        if features.iter().chain(&labels).any(|x| !x.is_finite()) {
            return Err(Error::Config("dataset contains non-finite values".into()));
        }
        let n = labels.len();
        let reg = family.default_regularizer();
        Self::build(family, loss, 1.0, reg, 1.0, Observations::Samples { features, labels }, n)
    }

    fn build(
        family: Family,
        loss: LossKind,
        lambda: f64,
        regularizer: Regularizer,
        reg_weight: f64,
        data: Observations,
        n: usize,
    ) -> Result<Self> {
        let spec = Self {
            family,
            loss,
            lambda,
            regularizer,
            reg_weight,
            data,
            quad_weights: vec![1.0 / n as f64; n].into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.reg_weight >= 0.0) || !self.reg_weight.is_finite() {
            return Err(Error::Config(format!(
                "reg_weight must be nonnegative, got {}",
                self.reg_weight
            )));
        }
        if self.regularizer == Regularizer::AbsWeight && !self.family.has_weight() {
            return Err(Error::Config(format!(
                "|w| regularization needs a weight coordinate, which {} particles do not have",
                self.family.tag()
            )));
        }
        if matches!(self.data, Observations::Signal(_)) && self.loss != LossKind::Quadratic {
            return Err(Error::Config("deconvolution supports the quadratic loss only".into()));
        }
        if self.loss == LossKind::Logistic {
            if let Observations::Samples { labels, .. } = &self.data {
                if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
                    return Err(Error::Config("logistic loss needs labels in {-1, +1}".into()));
                }
            }
        }
        Ok(())
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer, reg_weight: f64) -> Result<Self> {
        self.regularizer = regularizer;
        self.reg_weight = reg_weight;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg_weight
    }

    pub fn dim(&self) -> usize {
        self.family.particle_dim()
    }

    pub fn quad_weights(&self) -> Arc<[f64]> {
        self.quad_weights.clone()
    }

    /// Sample points of the quadrature: grid nodes for deconvolution.
    pub fn grid(&self) -> Option<&[f64]> {
        match &self.data {
            Observations::Signal(d) => Some(&d.grid),
            Observations::Samples { .. } => None,
        }
    }

    /// The target signal (deconvolution) or labels (networks).
    pub fn target(&self) -> &[f64] {
        match &self.data {
            Observations::Signal(d) => &d.target,
            Observations::Samples { labels, .. } => labels,
        }
    }

    pub(crate) fn deconvolution_data(&self) -> Option<&Deconvolution> {
        match &self.data {
            Observations::Signal(d) => Some(d),
            Observations::Samples { .. } => None,
        }
    }

    /// Training samples of a network family.
    pub fn samples(&self) -> Option<SampleSet<'_>> {
        match (&self.data, self.family.input_dim()) {
            (Observations::Samples { features, labels }, Some(p)) => Some(SampleSet {
                features,
                labels,
                input_dim: p,
            }),
            _ => None,
        }
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    fn check_measure(&self, mu: &ParticleMeasure) -> Result<()> {
        if mu.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} particles live in R^{}, measure is on R^{}",
                self.family.tag(),
                self.dim(),
                mu.dim()
            )));
        }
        if self.family.uses_signs() && mu.signs().is_none() {
            return Err(Error::Config("signed-square particles need +1/-1 copy tags".into()));
        }
        Ok(())
    }

    fn sample(&self, values: Vec<f64>) -> FunctionSample {
        FunctionSample {
            values,
            quad_weights: self.quad_weights.clone(),
        }
    }

    /// `Φ(u)` sampled on the quadrature.
    pub fn phi(&self, u: &[f64], sign: f64) -> Result<FunctionSample> {
        self.check_point(u)?;
        let values = match &self.data {
            Observations::Signal(d) => d.grid.iter().map(|x| u[0] * deconv::kernel(d.order, x - u[1])).collect(),
            Observations::Samples { .. } => {
                let set = self.samples().expect("network data");
                let mut out = vec![0.0; set.len()];
                network::evaluate(&self.family, u, sign, &set, &mut out);
                out
            }
        };
        Ok(self.sample(values))
    }

    /// The columns `∂_j Φ(u)`, one per particle coordinate.
    pub fn dphi(&self, u: &[f64], sign: f64) -> Result<Vec<FunctionSample>> {
        self.check_point(u)?;
        let cols = match &self.data {
            Observations::Signal(d) => {
                let dw = d.grid.iter().map(|x| deconv::kernel(d.order, x - u[1])).collect();
                let dtheta = d
                    .grid
                    .iter()
                    .map(|x| -u[0] * deconv::kernel_derivative(d.order, x - u[1]))
                    .collect();
                vec![dw, dtheta]
            }
            Observations::Samples { .. } => {
                let set = self.samples().expect("network data");
                network::jacobian(&self.family, u, sign, &set)?
            }
        };
        Ok(cols.into_iter().map(|c| self.sample(c)).collect())
    }

    fn check_sample(&self, f: &FunctionSample) -> Result<()> {
        if f.len() != self.quad_weights.len() {
            return Err(Error::Shape {
                expected: self.quad_weights.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `R(f)`.
    pub fn loss(&self, f: &FunctionSample) -> Result<f64> {
        self.check_sample(f)?;
        Ok(pointwise_loss(self.loss, self.lambda, f.values(), self.target(), &self.quad_weights))
    }

    /// The representer `R'(f)` of the differential: `dR_f(h) = ⟨R'(f), h⟩`.
    pub fn loss_grad(&self, f: &FunctionSample) -> Result<FunctionSample> {
        self.check_sample(f)?;
        let values = f
            .values()
            .iter()
            .zip(self.target())
            .map(|(fv, y)| pointwise_loss_derivative(self.loss, self.lambda, *fv, *y))
            .collect();
        Ok(self.sample(values))
    }

    /// `reg_weight · V(u)`.
    pub fn reg_value(&self, u: &[f64]) -> f64 {
        self.reg_weight * self.base_reg(u)
    }

    fn base_reg(&self, u: &[f64]) -> f64 {
        match self.regularizer {
            Regularizer::None => 0.0,
            Regularizer::AbsWeight => u[0].abs(),
            Regularizer::SquaredNorm => self.position_part(u).iter().map(|t| t * t).sum(),
        }
    }

    fn position_offset(&self) -> usize {
        usize::from(self.family.has_weight())
    }

    fn position_part<'u>(&self, u: &'u [f64]) -> &'u [f64] {
        &u[self.position_offset()..]
    }

    /// Proximal map of `τ V` (without `reg_weight`, which callers fold into `τ`).
    pub fn prox_reg(&self, u: &[f64], tau: f64) -> Vec<f64> {
        let mut out = u.to_vec();
        self.prox_in_place(&mut out, tau);
        out
    }

    pub(crate) fn prox_in_place(&self, u: &mut [f64], tau: f64) {
        match self.regularizer {
            Regularizer::None => {}
            Regularizer::AbsWeight => u[0] = soft_threshold(u[0], tau),
            Regularizer::SquaredNorm => {
                let off = self.position_offset();
                for t in &mut u[off..] {
                    *t /= 1.0 + 2.0 * tau;
                }
            }
        }
    }

    /// `ṽ − proj_{∂V(u)}(ṽ)`: the minimal-norm velocity from the smooth
    /// velocity `ṽ` at `u`.
    pub fn reg_minnorm_correction(&self, u: &[f64], v_tilde: &[f64]) -> Vec<f64> {
        let mut v = v_tilde.to_vec();
        self.correct_in_place(u, &mut v);
        v
    }

    pub(crate) fn correct_in_place(&self, u: &[f64], v: &mut [f64]) {
        let c = self.reg_weight;
        match self.regularizer {
            Regularizer::None => {}
            Regularizer::AbsWeight => {
                if u[0] != 0.0 {
                    v[0] -= c * u[0].signum();
                } else {
                    v[0] -= v[0].clamp(-c, c);
                }
            }
            Regularizer::SquaredNorm => {
                let off = self.position_offset();
                for (vj, t) in v[off..].iter_mut().zip(&u[off..]) {
                    *vj -= 2.0 * c * t;
                }
            }
        }
    }

    /// `∫Φ dμ` sampled on the quadrature.
    pub fn embed(&self, mu: &ParticleMeasure) -> Result<FunctionSample> {
        self.check_measure(mu)?;
        let mut values = vec![0.0; self.quad_weights.len()];
        for i in 0..mu.len() {
            let f = self.phi(mu.position(i), mu.sign(i))?;
            for (acc, v) in values.iter_mut().zip(f.values()) {
                *acc += mu.mass(i) * v;
            }
        }
        Ok(self.sample(values))
    }

    /// `∫ V dμ` including `reg_weight`.
    pub fn reg_integral(&self, mu: &ParticleMeasure) -> f64 {
        (0..mu.len()).map(|i| mu.mass(i) * self.reg_value(mu.position(i))).sum()
    }

    /// `F(μ) = R(∫Φ dμ) + ∫V dμ`.
    pub fn objective(&self, mu: &ParticleMeasure) -> Result<f64> {
        Ok(self.smooth_loss(mu)? + self.reg_integral(mu))
    }

    /// `R(∫Φ dμ)` alone.
    pub fn smooth_loss(&self, mu: &ParticleMeasure) -> Result<f64> {
        self.check_measure(mu)?;
        match &self.data {
            Observations::Signal(d) => {
                let coeffs = d.embed_coeffs(mu.positions(), mu.masses());
                Ok(d.loss(&coeffs, self.lambda))
            }
            Observations::Samples { .. } => {
                let set = self.samples().expect("network data");
                let f = self.embed_on(mu, &set);
                Ok(pointwise_loss(self.loss, self.lambda, &f, set.labels, &self.quad_weights))
            }
        }
    }

    fn embed_on(&self, mu: &ParticleMeasure, set: &SampleSet) -> Vec<f64> {
        let mut f = vec![0.0; set.len()];
        let mut buf = vec![0.0; set.len()];
        for i in 0..mu.len() {
            network::evaluate(&self.family, mu.position(i), mu.sign(i), set, &mut buf);
            let q = mu.mass(i);
            for (acc, v) in f.iter_mut().zip(&buf) {
                *acc += q * v;
            }
        }
        f
    }

    /// Loss on an arbitrary sample set with uniform weights (mini-batches,
    /// held-out evaluation sets).
    pub fn loss_on(&self, mu: &ParticleMeasure, set: &SampleSet) -> Result<f64> {
        self.check_measure(mu)?;
        if !self.family.is_network() {
            return Err(Error::Config("sample-set losses apply to network families".into()));
        }
        let f = self.embed_on(mu, set);
        let w = vec![1.0 / set.len() as f64; set.len()];
        Ok(pointwise_loss(self.loss, self.lambda, &f, set.labels, &w))
    }

    /// `F'(μ)` ready for repeated evaluation.
    pub fn potential(&self, mu: &ParticleMeasure) -> Result<Potential<'_>> {
        self.check_measure(mu)?;
        let repr = match &self.data {
            Observations::Signal(d) => {
                let coeffs = d.embed_coeffs(mu.positions(), mu.masses());
                PotentialRepr::Fourier(d.residual_coeffs(&coeffs, self.lambda))
            }
            Observations::Samples { .. } => {
                let set = self.samples().expect("network data");
                let f = self.embed_on(mu, &set);
                let weighted = self.weighted_residual(&f, &set, &self.quad_weights);
                PotentialRepr::Samples { weighted, set }
            }
        };
        Ok(Potential { spec: self, repr })
    }

    /// `F'(μ)` where the loss is taken over `set` with uniform weights.
    pub fn potential_on<'a>(&'a self, mu: &ParticleMeasure, set: SampleSet<'a>) -> Result<Potential<'a>> {
        self.check_measure(mu)?;
        if !self.family.is_network() {
            return Err(Error::Config("mini-batches apply to network families".into()));
        }
        let f = self.embed_on(mu, &set);
        let w = vec![1.0 / set.len() as f64; set.len()];
        let weighted = self.weighted_residual(&f, &set, &w);
        Ok(Potential {
            spec: self,
            repr: PotentialRepr::Samples { weighted, set },
        })
    }

    fn weighted_residual(&self, f: &[f64], set: &SampleSet, weights: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(set.labels)
            .zip(weights)
            .map(|((fv, y), w)| w * pointwise_loss_derivative(self.loss, self.lambda, *fv, *y))
            .collect()
    }

    /// `F'(μ)(u) = ⟨R'(∫Φdμ), Φ(u)⟩ + V(u)`.
    pub fn f_prime(&self, mu: &ParticleMeasure, u: &[f64], sign: f64) -> Result<f64> {
        self.check_point(u)?;
        Ok(self.potential(mu)?.value(u, sign))
    }

    pub fn f_prime_grad(&self, mu: &ParticleMeasure, u: &[f64], sign: f64) -> Result<FPrimeGradient> {
        self.check_point(u)?;
        self.potential(mu)?.gradient(u, sign)
    }

    /// Minimal-norm velocity field of the particle flow at `μ`.
    pub fn velocity(&self, mu: &ParticleMeasure) -> Result<VelocityField> {
        let mut eval = self.smooth_eval(mu)?;
        let d = self.dim();
        for (i, v) in eval.velocity.chunks_exact_mut(d).enumerate() {
            self.correct_in_place(mu.position(i), v);
        }
        Ok(VelocityField::from_flat(d, eval.velocity))
    }

    /// Loss value and smooth velocities `ṽ` on the full data.
    pub fn smooth_eval(&self, mu: &ParticleMeasure) -> Result<SmoothEval> {
        self.check_measure(mu)?;
        match &self.data {
            Observations::Signal(d) => {
                let (loss, velocity) = d.loss_and_velocity(mu.positions(), mu.masses(), self.lambda);
                Ok(SmoothEval { loss, velocity })
            }
            Observations::Samples { .. } => {
                let set = self.samples().expect("network data");
                self.smooth_eval_weighted(mu, set, &self.quad_weights.clone())
            }
        }
    }

    /// As [`smooth_eval`](Self::smooth_eval) with the loss over `set`.
    pub fn smooth_eval_on(&self, mu: &ParticleMeasure, set: SampleSet) -> Result<SmoothEval> {
        self.check_measure(mu)?;
        if !self.family.is_network() {
            return Err(Error::Config("mini-batches apply to network families".into()));
        }
        let w = vec![1.0 / set.len() as f64; set.len()];
        self.smooth_eval_weighted(mu, set, &w)
    }

    fn smooth_eval_weighted(&self, mu: &ParticleMeasure, set: SampleSet, weights: &[f64]) -> Result<SmoothEval> {
        let f = self.embed_on(mu, &set);
        let loss = pointwise_loss(self.loss, self.lambda, &f, set.labels, weights);
        let gw = self.weighted_residual(&f, &set, weights);
        let d = self.dim();
        let mut velocity = vec![0.0; mu.len() * d];
        for (i, v) in velocity.chunks_exact_mut(d).enumerate() {
            network::accumulate_gradient(&self.family, mu.position(i), mu.sign(i), &set, &gw, v).map_err(|e| {
                match e {
                    Error::NonDifferentiable(msg) => Error::NonDifferentiable(format!("particle {i}: {msg}")),
                    other => other,
                }
            })?;
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        Ok(SmoothEval { loss, velocity })
    }

    /// Minimal-norm element of `∂(reg_weight·V)(u)` and whether `V` is
    /// differentiable there.
    pub(crate) fn reg_minnorm_subgradient(&self, u: &[f64]) -> (Vec<f64>, bool) {
        let mut g = vec![0.0; u.len()];
        let c = self.reg_weight;
        let differentiable = match self.regularizer {
            Regularizer::None => true,
            Regularizer::AbsWeight => {
                if u[0] != 0.0 {
                    g[0] = c * u[0].signum();
                    true
                } else {
                    c == 0.0
                }
            }
            Regularizer::SquaredNorm => {
                let off = self.position_offset();
                for (gj, t) in g[off..].iter_mut().zip(&u[off..]) {
                    *gj = 2.0 * c * t;
                }
                true
            }
        };
        (g, differentiable)
    }

    /// Network kink margin of `u` on the training data (`∞` for smooth families).
    pub fn kink_margin(&self, u: &[f64]) -> f64 {
        match (&self.family, self.samples()) {
            (Family::ReluNetClassic { .. } | Family::ReluNetSignedSquare { .. }, Some(set)) => {
                network::kink_margin(&self.family, u, &set)
            }
            _ => f64::INFINITY,
        }
    }
}

impl Potential<'_> {
    /// `F'(μ)(u)`.
    pub fn value(&self, u: &[f64], sign: f64) -> f64 {
        self.correlation(u, sign) + self.spec.reg_value(u)
    }

    /// `⟨R'(∫Φdμ), Φ(u)⟩`.
    pub fn correlation(&self, u: &[f64], sign: f64) -> f64 {
        match (&self.repr, &self.spec.data) {
            (PotentialRepr::Fourier(g), Observations::Signal(d)) => u[0] * d.correlate(g, u[1]).0,
            (PotentialRepr::Samples { weighted, set }, _) => {
                let mut out = vec![0.0; set.len()];
                network::evaluate(&self.spec.family, u, sign, set, &mut out);
                out.iter().zip(weighted).map(|(a, b)| a * b).sum()
            }
            _ => unreachable!("potential representation matches the data"),
        }
    }

    /// `[⟨R', ∂_jΦ(u)⟩]_j`, the gradient of the smooth part.
    pub fn correlation_gradient(&self, u: &[f64], sign: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; u.len()];
        match (&self.repr, &self.spec.data) {
            (PotentialRepr::Fourier(gc), Observations::Signal(d)) => {
                let (s, ds) = d.correlate(gc, u[1]);
                g[0] = s;
                g[1] = u[0] * ds;
            }
            (PotentialRepr::Samples { weighted, set }, _) => {
                network::accumulate_gradient(&self.spec.family, u, sign, set, weighted, &mut g)?;
            }
            _ => unreachable!("potential representation matches the data"),
        }
        Ok(g)
    }

    /// Gradient of `F'(μ)` with the minimal-norm element of `∂V(u)`.
    pub fn gradient(&self, u: &[f64], sign: f64) -> Result<FPrimeGradient> {
        let mut grad = self.correlation_gradient(u, sign)?;
        let (reg, differentiable) = self.spec.reg_minnorm_subgradient(u);
        for (g, r) in grad.iter_mut().zip(reg) {
            *g += r;
        }
        Ok(FPrimeGradient { grad, differentiable })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }
}

pub fn soft_threshold(w: f64, tau: f64) -> f64 {
    w.signum() * (w.abs() - tau).max(0.0)
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub(crate) fn pointwise_loss(kind: LossKind, lambda: f64, f: &[f64], y: &[f64], weights: &[f64]) -> f64 {
    match kind {
        LossKind::Quadratic => {
            f.iter()
                .zip(y)
                .zip(weights)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
                / (2.0 * lambda)
        }
        LossKind::Logistic => f
            .iter()
            .zip(y)
            .zip(weights)
            .map(|((a, b), w)| w * softplus(-b * a))
            .sum(),
    }
}

pub(crate) fn pointwise_loss_derivative(kind: LossKind, lambda: f64, f: f64, y: f64) -> f64 {
    match kind {
        LossKind::Quadratic => (f - y) / lambda,
        LossKind::Logistic => -y * sigmoid(-y * f),
    }
}

#[cfg(test)]
mod tests;
