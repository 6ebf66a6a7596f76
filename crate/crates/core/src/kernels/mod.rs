//! Covariance functions on exact and uncertain locations, and the expected
//! path-loss mean.

mod mean;
mod poly;

pub use mean::{expected_log10, expected_mean, log10_variance, mean_correction, MeanEstimate, FALLBACK_SAMPLES};
pub use poly::{gaussian_raw_moments, PolyLogApprox, MAX_AUTO_DEGREE, POLY_TOLERANCE};

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::{LocationDistribution, Point};

/// Exponent `p` of `exp(-|d|^p / d_c^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelExponent {
    /// Exponential (Gudmundson) kernel.
    One,
    /// Squared-exponential kernel.
    Two,
}

impl KernelExponent {
    pub fn value(self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
        }
    }

    pub fn from_value(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::UnsupportedKernel(format!("kernel exponent {p}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub sigma_n: f64,
    pub sigma_proc: f64,
    pub d_c: f64,
    pub l0: f64,
    pub eta: f64,
    pub sigma_psi: f64,
    pub p: KernelExponent,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            sigma_n: 0.01,
            sigma_proc: 0.0,
            d_c: 15.0,
            l0: -10.0,
            eta: 2.5,
            sigma_psi: 10.0,
            p: KernelExponent::One,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_n >= 0.0
            && self.sigma_proc >= 0.0
            && self.sigma_psi >= 0.0
            && self.d_c > 0.0
            && self.d_c.is_finite()
            && self.l0.is_finite()
            && self.eta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyperparameters {self:?}")))
        }
    }

    /// Prior variance of a single noise-free output, `sigma_psi^2 + sigma_proc^2`.
    pub fn prior_variance(&self) -> f64 {
        self.sigma_psi * self.sigma_psi + self.sigma_proc * self.sigma_proc
    }
}

/// Correlation `exp(-|a-b|^p / d_c^p)` between two exact locations.
pub fn correlation(a: &Point, b: &Point, d_c: f64, p: KernelExponent) -> f64 {
    let diff = a - b;
    match p {
        KernelExponent::One => (-diff.norm() / d_c).exp(),
        KernelExponent::Two => (-diff.norm_squared() / (d_c * d_c)).exp(),
    }
}

pub fn cov_classical(x_i: &Point, x_j: &Point, theta: &Hyperparameters, same_index: bool) -> f64 {
    let mut c = theta.sigma_psi * theta.sigma_psi * correlation(x_i, x_j, theta.d_c, theta.p);
    if same_index {
        c += theta.sigma_proc * theta.sigma_proc;
    }
    c
}

/// `E[exp(-|x_i - x_j|^2 / d_c^2)]` for independent Gaussian inputs. For the
/// same index the inputs are one random variable and the value is 1.
pub fn expected_correlation(u_i: &LocationDistribution, u_j: &LocationDistribution, d_c: f64, same_index: bool) -> f64 {
    if same_index {
        return 1.0;
    }
    let s: Matrix2<f64> = u_i.cov() + u_j.cov();
    let dz = u_i.mean() - u_j.mean();
    if s == Matrix2::zeros() {
        return (-dz.norm_squared() / (d_c * d_c)).exp();
    }
    // x_i - x_j ~ N(dz, S); the kernel is exp(-v^T W^{-1} v / 2) with W = d_c^2/2 I.
    let a = Matrix2::identity() + s * (2.0 / (d_c * d_c));
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let inv = Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]) / det;
    let q = dz.dot(&(inv * dz));
    det.powf(-0.5) * (-q / (d_c * d_c)).exp()
}

/// Expected covariance of the squared-exponential kernel under Gaussian
/// location uncertainty. Reduces to [`cov_classical`] with `p = 2` when both
/// covariances vanish.
pub fn cov_expected(
    u_i: &LocationDistribution,
    u_j: &LocationDistribution,
    theta: &Hyperparameters,
    same_index: bool,
) -> Result<f64> {
    if theta.p != KernelExponent::Two {
        return Err(Error::UnsupportedKernel(
            "the expected kernel has a closed form only for p = 2".into(),
        ));
    }
    if u_i.dim() != u_j.dim() {
        return Err(Error::Domain("location dimensions differ".into()));
    }
    let mut c = theta.sigma_psi * theta.sigma_psi * expected_correlation(u_i, u_j, theta.d_c, same_index);
    if same_index {
        c += theta.sigma_proc * theta.sigma_proc;
    }
    Ok(c)
}

/// Unit-variance correlation matrix of exact locations.
pub fn correlation_matrix(points: &[Point], d_c: f64, p: KernelExponent) -> DMatrix<f64> {
    let n = points.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = correlation(&points[i], &points[j], d_c, p);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Unit-variance expected correlation matrix of uncertain locations.
pub fn expected_correlation_matrix(inputs: &[LocationDistribution], d_c: f64) -> DMatrix<f64> {
    let n = inputs.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = expected_correlation(&inputs[i], &inputs[j], d_c, false);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// `a R + c I`.
pub fn scaled_plus_diagonal(r: &DMatrix<f64>, a: f64, c: f64) -> DMatrix<f64> {
    let mut k = r * a;
    for i in 0..k.nrows() {
        k[(i, i)] += c;
    }
    k
}

/// Prior covariance of noisy observations at exact locations,
/// `C(X, X) + sigma_n^2 I`.
pub fn gram_classical(points: &[Point], theta: &Hyperparameters) -> DMatrix<f64> {
    let r = correlation_matrix(points, theta.d_c, theta.p);
    scaled_plus_diagonal(
        &r,
        theta.sigma_psi * theta.sigma_psi,
        theta.sigma_proc * theta.sigma_proc + theta.sigma_n * theta.sigma_n,
    )
}

/// Prior covariance of noisy observations at uncertain locations,
/// `C_u(U, U) + sigma_n^2 I`.
pub fn gram_expected(inputs: &[LocationDistribution], theta: &Hyperparameters) -> Result<DMatrix<f64>> {
    if theta.p != KernelExponent::Two {
        return Err(Error::UnsupportedKernel(
            "the expected kernel has a closed form only for p = 2".into(),
        ));
    }
    let r = expected_correlation_matrix(inputs, theta.d_c);
    Ok(scaled_plus_diagonal(
        &r,
        theta.sigma_psi * theta.sigma_psi,
        theta.sigma_proc * theta.sigma_proc + theta.sigma_n * theta.sigma_n,
    ))
}

pub fn cross_classical(points: &[Point], x_star: &Point, theta: &Hyperparameters) -> DVector<f64> {
    DVector::from_iterator(
        points.len(),
        points.iter().map(|x| cov_classical(x, x_star, theta, false)),
    )
}

pub fn cross_expected(
    inputs: &[LocationDistribution],
    u_star: &LocationDistribution,
    theta: &Hyperparameters,
) -> Result<DVector<f64>> {
    let v: Result<Vec<f64>> = inputs.iter().map(|u| cov_expected(u, u_star, theta, false)).collect();
    Ok(DVector::from_vec(v?))
}
