//! Locations and Gaussian location distributions.
//!
//! One-dimensional problems are embedded in the plane with a zero second
//! coordinate and zero covariance in every entry except `(0, 0)`. All kernel
//! formulas are then identical for both dimensions.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// A location in meters. The transmitter sits at the origin.
pub type Point = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    One,
    Two,
}

impl Dim {
    pub fn count(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::Two => 2,
        }
    }
}

pub fn point1(x: f64) -> Point {
    Point::new(x, 0.0)
}

/// Gaussian location distribution `N(mean, cov)`. A zero covariance is the
/// delta-Dirac case, i.e. an exactly known location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationDistribution {
    mean: Point,
    cov: Matrix2<f64>,
    dim: Dim,
}

impl LocationDistribution {
    pub fn exact(at: Point, dim: Dim) -> Self {
        let mean = match dim {
            Dim::One => point1(at.x),
            Dim::Two => at,
        };
        Self {
            mean,
            cov: Matrix2::zeros(),
            dim,
        }
    }

    /// Isotropic distribution `N(mean, sigma^2 I)`.
    pub fn isotropic(mean: Point, sigma: f64, dim: Dim) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("location std must be >= 0, got {sigma}")));
        }
        let var = sigma * sigma;
        let cov = match dim {
            Dim::One => Matrix2::new(var, 0.0, 0.0, 0.0),
            Dim::Two => Matrix2::new(var, 0.0, 0.0, var),
        };
        Self::new(mean, cov, dim)
    }

    pub fn new(mean: Point, cov: Matrix2<f64>, dim: Dim) -> Result<Self> {
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::Domain("location distribution has non-finite entries".into()));
        }
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * (1.0 + cov.abs().max()) {
            return Err(Error::Domain("location covariance is not symmetric".into()));
        }
        if dim == Dim::One && (mean.y != 0.0 || cov[(0, 1)] != 0.0 || cov[(1, 1)] != 0.0) {
            return Err(Error::Domain("1-D distribution with a second coordinate".into()));
        }
        let tr = cov.trace();
        let det = cov.determinant();
        let tol = 1e-12 * (1.0 + tr.abs());
        if cov[(0, 0)] < -tol || cov[(1, 1)] < -tol || det < -tol * tol.max(tr.abs()) {
            return Err(Error::Domain("location covariance is not positive semidefinite".into()));
        }
        Ok(Self { mean, cov, dim })
    }

    /// The position estimate `z = phi(u)`, here the mean.
    pub fn mean(&self) -> Point {
        self.mean
    }

    pub fn cov(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn is_exact(&self) -> bool {
        self.cov.iter().all(|&v| v == 0.0)
    }

    /// Largest eigenvalue of the covariance.
    pub fn max_variance(&self) -> f64 {
        let a = self.cov[(0, 0)];
        let d = self.cov[(1, 1)];
        let b = self.cov[(0, 1)];
        let half_tr = 0.5 * (a + d);
        let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (half_tr + disc).max(0.0)
    }

    /// Variance of the location projected on the direction of the mean, which
    /// is the first-order variance of the distance to the origin.
    pub fn radial_variance(&self) -> f64 {
        let norm = self.mean.norm();
        if norm == 0.0 {
            return self.max_variance();
        }
        let dir = self.mean / norm;
        (dir.transpose() * self.cov * dir)[(0, 0)].max(0.0)
    }

    /// Lower Cholesky-like square root used for sampling. PSD input is
    /// assumed (checked at construction).
    pub(crate) fn sqrt_cov(&self) -> Matrix2<f64> {
        let a = self.cov[(0, 0)].max(0.0);
        let b = self.cov[(1, 0)];
        let l00 = a.sqrt();
        let l10 = if l00 > 0.0 { b / l00 } else { 0.0 };
        let l11 = (self.cov[(1, 1)] - l10 * l10).max(0.0).sqrt();
        Matrix2::new(l00, 0.0, l10, l11)
    }

    /// Draw a location from this distribution given two standard normals.
    pub(crate) fn draw_with(&self, e0: f64, e1: f64) -> Point {
        if self.is_exact() {
            return self.mean;
        }
        let l = self.sqrt_cov();
        let e1 = if self.dim == Dim::One { 0.0 } else { e1 };
        self.mean + l * Point::new(e0, e1)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Point {
        use rand_distr::StandardNormal;
        if self.is_exact() {
            return self.mean;
        }
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = match self.dim {
            Dim::One => 0.0,
            Dim::Two => rng.sample(StandardNormal),
        };
        self.draw_with(e0, e1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_one_dim_has_single_variance_entry() {
        let u = LocationDistribution::isotropic(point1(50.0), 3.0, Dim::One).unwrap();
        assert_eq!(u.cov()[(0, 0)], 9.0);
        assert_eq!(u.cov()[(1, 1)], 0.0);
        assert_eq!(u.max_variance(), 9.0);
        assert!(!u.is_exact());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(LocationDistribution::new(Point::new(1.0, 1.0), cov, Dim::Two).is_err());
        assert!(LocationDistribution::isotropic(point1(1.0), -1.0, Dim::One).is_err());
    }

    #[test]
    fn radial_variance_projects_on_mean_direction() {
        let cov = Matrix2::new(4.0, 0.0, 0.0, 1.0);
        let u = LocationDistribution::new(Point::new(0.0, 10.0), cov, Dim::Two).unwrap();
        assert!((u.radial_variance() - 1.0).abs() < 1e-12);
        assert!((u.max_variance() - 4.0).abs() < 1e-12);
    }
}
