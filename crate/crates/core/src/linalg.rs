//! Dense symmetric positive-definite helpers: jittered Cholesky, the
//! negative log-likelihood, and a spectral shortcut for `a R + c I` families.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative diagonal jitter levels tried in order before giving up.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorize `matrix + eps * scale * I`, escalating `eps` along
    /// [`JITTER_LADDER`].
    pub fn new(matrix: DMatrix<f64>, scale: f64) -> Result<Self> {
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        let n = matrix.nrows();
        for &eps in JITTER_LADDER.iter() {
            let mut m = matrix.clone();
            let jitter = eps * scale;
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = m.cholesky() {
                if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                    return Ok(Self { chol, jitter });
                }
            }
        }
        Err(Error::NotPositiveDefinite {
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b`, so that `b^T K^{-1} b = |L^{-1} b|^2`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// `b^T K^{-1} b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }

    /// `L e` for drawing correlated Gaussians.
    pub fn mul_lower(&self, e: &DVector<f64>) -> DVector<f64> {
        self.chol.l() * e
    }
}

/// `log|K| + r^T K^{-1} r`, the negative log-likelihood with constants and
/// the factor one half dropped.
pub fn nll(residuals: &DVector<f64>, gram: &DMatrix<f64>, jitter_scale: f64) -> Result<f64> {
    if gram.nrows() != residuals.len() || !gram.is_square() {
        return Err(Error::Domain("gram/residual dimension mismatch".into()));
    }
    let f = Factor::new(gram.clone(), jitter_scale)?;
    Ok(f.log_det() + f.quad_form(residuals))
}

/// `log N(r; 0, K)`.
pub fn log_gaussian_density(residuals: &DVector<f64>, factor: &Factor) -> f64 {
    let n = residuals.len() as f64;
    -0.5 * (factor.log_det() + factor.quad_form(residuals) + n * (2.0 * std::f64::consts::PI).ln())
}

/// Eigen-decomposition of a fixed symmetric matrix `R` together with the
/// projected residual, so that the negative log-likelihood of
/// `K = a R + c I` is available in O(n) for any `a >= 0`, `c > 0`.
#[derive(Debug, Clone)]
pub struct SpectralGram {
    eigenvalues: Vec<f64>,
    projected_sq: Vec<f64>,
}

impl SpectralGram {
    pub fn new(r: DMatrix<f64>, residuals: &DVector<f64>) -> Self {
        let eig = SymmetricEigen::new(r);
        let proj = eig.eigenvectors.transpose() * residuals;
        Self {
            // negative round-off is projected out; K stays PSD
            eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
            projected_sq: proj.iter().map(|p| p * p).collect(),
        }
    }

    pub fn nll(&self, a: f64, c: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.projected_sq)
            .map(|(&l, &p2)| {
                let k = a * l + c;
                k.ln() + p2 / k
            })
            .sum()
    }
}

/// `log(sum(exp(v)))` without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
