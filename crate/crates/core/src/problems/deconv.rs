//! Sparse deconvolution on the 1-torus with a Dirichlet low-pass filter.
//!
//! The filter `ψ(x) = Σ_{|j|≤K} e^{2πijx}` is band-limited, so every
//! quantity of the objective on the `n`-point grid (`n > 2K`) is an exact
//! finite sum over the `2K + 1` in-band discrete Fourier coefficients. The
//! particle engine works on those coefficients; the sampled representation
//! is kept for the public `FunctionSample` interface.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn kernel(order: usize, x: f64) -> f64 {
    1.0 + 2.0 * (1..=order).map(|j| (TAU * j as f64 * x).cos()).sum::<f64>()
}

pub fn kernel_derivative(order: usize, x: f64) -> f64 {
    -2.0 * (1..=order)
        .map(|j| TAU * j as f64 * (TAU * j as f64 * x).sin())
        .sum::<f64>()
}

#[derive(Clone, Debug)]
pub(crate) struct Deconvolution {
    pub order: usize,
    pub grid: Vec<f64>,
    pub target: Vec<f64>,
    /// `Y_j = (1/n) Σ_k y_k e^{2πi j x_k}` for `j = 0..=K`.
    target_coeffs: Vec<Complex64>,
    /// `(1/n) Σ y_k² − Σ_{|j|≤K} |Y_j|²`: target energy the model cannot reach.
    out_of_band: f64,
}

impl Deconvolution {
    pub fn new(order: usize, target: Vec<f64>) -> Result<Self> {
        let n = target.len();
        if n <= 2 * order {
            return Err(Error::Config(format!(
                "grid of {n} points cannot resolve a Dirichlet kernel of order {order} (need n > 2K)"
            )));
        }
        if target.iter().any(|y| !y.is_finite()) {
            return Err(Error::Config("target signal contains non-finite values".into()));
        }
        let grid: Vec<f64> = (0..n).map(|k| k as f64 / n as f64).collect();
        let target_coeffs: Vec<Complex64> = (0..=order)
            .map(|j| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, y) in target.iter().enumerate() {
                    // exact phase from the integer product keeps the reduction accurate
                    let phase = TAU * ((j * k) % n) as f64 / n as f64;
                    acc += Complex64::from_polar(*y, phase);
                }
                acc / n as f64
            })
            .collect();
        let energy = target.iter().map(|y| y * y).sum::<f64>() / n as f64;
        let in_band = target_coeffs[0].norm_sqr() + 2.0 * target_coeffs[1..].iter().map(|c| c.norm_sqr()).sum::<f64>();
        Ok(Self {
            order,
            grid,
            target,
            target_coeffs,
            out_of_band: (energy - in_band).max(0.0),
        })
    }

    /// `e^{2πi j θ}` for `j = 0..=K`.
    fn phases(&self, theta: f64, out: &mut [Complex64]) {
        let base = Complex64::from_polar(1.0, TAU * theta);
        let mut acc = Complex64::new(1.0, 0.0);
        for slot in out.iter_mut() {
            *slot = acc;
            acc *= base;
        }
    }

    /// `F_j = Σ_i q_i w_i e^{2πi j θ_i}`, the in-band coefficients of `∫Φ dμ`.
    pub fn embed_coeffs(&self, positions: &[f64], masses: &[f64]) -> Vec<Complex64> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); self.order + 1];
        let mut ph = vec![Complex64::new(0.0, 0.0); self.order + 1];
        for (u, q) in positions.chunks_exact(2).zip(masses) {
            let a = q * u[0];
            if a == 0.0 {
                continue;
            }
            self.phases(u[1], &mut ph);
            for (c, p) in coeffs.iter_mut().zip(&ph) {
                *c += p * a;
            }
        }
        coeffs
    }

    /// `(1/2λ) (1/n) Σ_k (f_k − y_k)²` from the in-band coefficients of `f`.
    pub fn loss(&self, coeffs: &[Complex64], lambda: f64) -> f64 {
        let r0 = (coeffs[0] - self.target_coeffs[0]).norm_sqr();
        let rest: f64 = coeffs[1..]
            .iter()
            .zip(&self.target_coeffs[1..])
            .map(|(f, y)| (f - y).norm_sqr())
            .sum();
        (r0 + 2.0 * rest + self.out_of_band) / (2.0 * lambda)
    }

    /// In-band coefficients of the loss-gradient representer `(f − y)/λ`.
    pub fn residual_coeffs(&self, coeffs: &[Complex64], lambda: f64) -> Vec<Complex64> {
        coeffs
            .iter()
            .zip(&self.target_coeffs)
            .map(|(f, y)| (f - y) / lambda)
            .collect()
    }

    /// Loss and smooth velocity `(−S(θ_i), −w_i S'(θ_i))` of every particle,
    /// sharing one phase evaluation per particle between both passes.
    pub fn loss_and_velocity(&self, positions: &[f64], masses: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let bases: Vec<Complex64> = positions
            .chunks_exact(2)
            .map(|u| Complex64::from_polar(1.0, TAU * u[1]))
            .collect();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); self.order + 1];
        for ((u, q), base) in positions.chunks_exact(2).zip(masses).zip(&bases) {
            let a = q * u[0];
            if a == 0.0 {
                continue;
            }
            let mut acc = Complex64::new(a, 0.0);
            for c in coeffs.iter_mut() {
                *c += acc;
                acc *= base;
            }
        }
        let loss = self.loss(&coeffs, lambda);
        let g = self.residual_coeffs(&coeffs, lambda);
        let mut velocity = Vec::with_capacity(positions.len());
        for (u, base) in positions.chunks_exact(2).zip(&bases) {
            let (s, ds) = self.correlate_with(&g, base.conj());
            velocity.push(-s);
            velocity.push(-u[0] * ds);
        }
        (loss, velocity)
    }

    /// `(S(θ), S'(θ))` with `S(θ) = ⟨g, ψ(· − θ)⟩` for a representer given by
    /// its coefficients `G_j`.
    pub fn correlate(&self, g: &[Complex64], theta: f64) -> (f64, f64) {
        self.correlate_with(g, Complex64::from_polar(1.0, -TAU * theta))
    }

    /// As [`correlate`](Self::correlate) given `e^{-2πiθ}`.
    fn correlate_with(&self, g: &[Complex64], base: Complex64) -> (f64, f64) {
        let mut acc = base;
        let mut value = g[0].re;
        let mut slope = 0.0;
        for (j, gj) in g.iter().enumerate().skip(1) {
            let t = gj * acc;
            value += 2.0 * t.re;
            // d/dθ e^{-2πijθ} = -2πij e^{-2πijθ}; Re(-i t) = t.im
            slope += 2.0 * TAU * j as f64 * t.im;
            acc *= base;
        }
        (value, slope)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_values() {
        assert_abs_diff_eq!(kernel(7, 0.0), 15.0, epsilon = 1e-12);
        // Σ_{k=-7..7} (-1)^k
        let brute: f64 = (-7i32..=7).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).sum();
        assert_abs_diff_eq!(brute, -1.0);
        assert_abs_diff_eq!(kernel(7, 0.5), brute, epsilon = 1e-12);
    }

    #[test]
    fn kernel_derivative_matches_differences() {
        for x in [0.013, 0.2, 0.77] {
            let h = 1e-6;
            let fd = (kernel(7, x + h) - kernel(7, x - h)) / (2.0 * h);
            assert_abs_diff_eq!(kernel_derivative(7, x), fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn fourier_loss_matches_grid_sum() {
        let n = 64;
        let target: Vec<f64> = (0..n).map(|k| ((k * 7) % 11) as f64 * 0.1 - 0.4).collect();
        let d = Deconvolution::new(3, target.clone()).unwrap();
        let positions = [0.7, 0.11, -1.3, 0.52, 2.0, 0.9];
        let masses = [0.2, 0.5, 0.3];
        let f: Vec<f64> = d
            .grid
            .iter()
            .map(|x| {
                positions
                    .chunks(2)
                    .zip(&masses)
                    .map(|(u, q)| q * u[0] * kernel(3, x - u[1]))
                    .sum()
            })
            .collect();
        let grid_loss: f64 = f.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64 / (2.0 * 0.3);
        let coeffs = d.embed_coeffs(&positions, &masses);
        assert_abs_diff_eq!(d.loss(&coeffs, 0.3), grid_loss, epsilon = 1e-12);

        let g: Vec<f64> = f.iter().zip(&target).map(|(a, b)| (a - b) / 0.3).collect();
        let gc = d.residual_coeffs(&coeffs, 0.3);
        for theta in [0.0, 0.31, 0.9] {
            let direct: f64 = d.grid.iter().zip(&g).map(|(x, gk)| gk * kernel(3, x - theta)).sum::<f64>() / n as f64;
            let slope: f64 =
                -d.grid.iter().zip(&g).map(|(x, gk)| gk * kernel_derivative(3, x - theta)).sum::<f64>() / n as f64;
            let (v, s) = d.correlate(&gc, theta);
            assert_abs_diff_eq!(v, direct, epsilon = 1e-11);
            assert_abs_diff_eq!(s, slope, epsilon = 1e-9);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(Deconvolution::new(7, vec![0.0; 14]).is_err());
    }
}
