//! Ground-truth channel fields with correlated log-normal shadowing.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{point1, Dim, LocationDistribution, Point};
use crate::kernels::KernelExponent;
use crate::linalg::Factor;

/// Deterministic path-loss mean `L0 - 10 eta log10(|x|)` in dBm.
pub fn path_loss_mean(x: &Point, l0: f64, eta: f64) -> f64 {
    l0 - 10.0 * eta * x.norm().log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub dim: Dim,
    pub extent_min: Point,
    pub extent_max: Point,
    /// Grid spacing in meters.
    pub resolution: f64,
    /// Shadowing standard deviation in dB.
    pub sigma_psi: f64,
    /// Shadowing correlation distance in meters.
    pub d_c: f64,
    /// Reference power in dBm.
    pub l0: f64,
    /// Path-loss exponent.
    pub eta: f64,
    /// Measurement noise standard deviation in dB.
    pub sigma_n: f64,
    pub seed: u64,
    /// Exponent of the true shadowing covariance. The Gudmundson model is
    /// `One`; `Two` exists to test kernel-mismatch calibration.
    pub truth_kernel: KernelExponent,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            dim: Dim::One,
            extent_min: point1(20.0),
            extent_max: point1(200.0),
            resolution: 0.25,
            sigma_psi: 10.0,
            d_c: 15.0,
            l0: -10.0,
            eta: 2.5,
            sigma_n: 0.01,
            seed: 1,
            truth_kernel: KernelExponent::One,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.resolution > 0.0) {
            return bad("resolution must be > 0");
        }
        let axes = self.dim.count();
        for k in 0..axes {
            if !(self.extent_max[k] > self.extent_min[k]) {
                return bad("extent_max must exceed extent_min on every axis");
            }
            if self.resolution > self.extent_max[k] - self.extent_min[k] {
                return bad("resolution is larger than the field extent");
            }
        }
        if !(self.sigma_psi > 0.0) {
            return bad("sigma_psi must be > 0");
        }
        if !(self.d_c > 0.0) {
            return bad("d_c must be > 0");
        }
        if !(self.sigma_n >= 0.0) {
            return bad("sigma_n must be >= 0");
        }
        if !(self.eta > 0.0) {
            return bad("eta must be > 0");
        }
        if !self.l0.is_finite() {
            return bad("l0 must be finite");
        }
        let g = GridGeometry::from_config(self);
        if (0..g.len()).any(|i| g.point(i).norm() < 1e-9 * self.resolution) {
            return bad("grid contains the transmitter location (origin)");
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::from_config(self)
    }

    /// The reference shadowing covariance between two locations.
    pub fn reference_cov(&self, a: &Point, b: &Point) -> f64 {
        let r = (a - b).norm() / self.d_c;
        let arg = match self.truth_kernel {
            KernelExponent::One => r,
            KernelExponent::Two => r * r,
        };
        self.sigma_psi * self.sigma_psi * (-arg).exp()
    }
}

/// Regular grid; points are stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub dim: Dim,
    pub min: Point,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    fn from_config(c: &FieldConfig) -> Self {
        let count = |k: usize| ((c.extent_max[k] - c.extent_min[k]) / c.resolution + 1e-9).floor() as usize + 1;
        let nx = count(0);
        let ny = if c.dim == Dim::Two { count(1) } else { 1 };
        let min = if c.dim == Dim::Two {
            c.extent_min
        } else {
            point1(c.extent_min.x)
        };
        Self {
            dim: c.dim,
            min,
            resolution: c.resolution,
            nx,
            ny,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> Point {
        let ix = index % self.nx;
        let iy = index / self.nx;
        Point::new(
            self.min.x + ix as f64 * self.resolution,
            if self.dim == Dim::Two {
                self.min.y + iy as f64 * self.resolution
            } else {
                0.0
            },
        )
    }

    pub fn max(&self) -> Point {
        self.point(self.len() - 1)
    }

    fn axis_index(&self, value: f64, min: f64, n: usize) -> Option<usize> {
        let f = (value - min) / self.resolution;
        let slack = 1e-9;
        if f < -slack || f > (n - 1) as f64 + slack {
            return None;
        }
        // ties go to the lower index
        let i = (f - 0.5).ceil().max(0.0) as usize;
        Some(i.min(n - 1))
    }

    /// Nearest grid point, ties broken toward the lower index.
    pub fn nearest_index(&self, x: &Point) -> Result<usize> {
        let out = || Error::OutOfDomain { x: x.x, y: x.y };
        let ix = self.axis_index(x.x, self.min.x, self.nx).ok_or_else(out)?;
        let iy = match self.dim {
            Dim::One => 0,
            Dim::Two => self.axis_index(x.y, self.min.y, self.ny).ok_or_else(out)?,
        };
        Ok(iy * self.nx + ix)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.nearest_index(x).is_ok()
    }
}

/// A realized channel: shadowing and received power on every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField {
    geometry: GridGeometry,
    grid: Vec<Point>,
    shadowing: Vec<f64>,
    power: Vec<f64>,
}

impl ChannelField {
    /// Assemble a field from explicit shadowing values.
    pub fn from_shadowing(config: &FieldConfig, shadowing: Vec<f64>) -> Result<Self> {
        let geometry = config.geometry();
        if shadowing.len() != geometry.len() {
            return Err(Error::Config(format!(
                "expected {} shadowing values, got {}",
                geometry.len(),
                shadowing.len()
            )));
        }
        let grid: Vec<Point> = (0..geometry.len()).map(|i| geometry.point(i)).collect();
        let power = grid
            .iter()
            .zip(&shadowing)
            .map(|(x, s)| path_loss_mean(x, config.l0, config.eta) + s)
            .collect();
        Ok(Self {
            geometry,
            grid,
            shadowing,
            power,
        })
    }

    /// Field whose received power is given directly; shadowing is whatever
    /// remains after removing the path loss.
    pub fn from_power_fn(config: &FieldConfig, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let geometry = config.geometry();
        let grid: Vec<Point> = (0..geometry.len()).map(|i| geometry.point(i)).collect();
        let power: Vec<f64> = grid.iter().map(&f).collect();
        let shadowing = grid
            .iter()
            .zip(&power)
            .map(|(x, p)| p - path_loss_mean(x, config.l0, config.eta))
            .collect();
        Ok(Self {
            geometry,
            grid,
            shadowing,
            power,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn shadowing(&self) -> &[f64] {
        &self.shadowing
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Received power at the grid point nearest to `x`.
    pub fn received_power_at(&self, x: &Point) -> Result<f64> {
        Ok(self.power[self.geometry.nearest_index(x)?])
    }

    /// Write the field as CSV: `loc_x[,loc_y],shadowing_db,power_dbm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.geometry.dim {
            Dim::One => writeln!(w, "loc_x,shadowing_db,power_dbm")?,
            Dim::Two => writeln!(w, "loc_x,loc_y,shadowing_db,power_dbm")?,
        }
        for ((x, s), p) in self.grid.iter().zip(&self.shadowing).zip(&self.power) {
            match self.geometry.dim {
                Dim::One => writeln!(w, "{},{},{}", x.x, s, p)?,
                Dim::Two => writeln!(w, "{},{},{},{}", x.x, x.y, s, p)?,
            }
        }
        Ok(())
    }
}

/// Cached factorization of the reference covariance on the grid, so that many
/// independent fields can be drawn for one configuration.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    config: FieldConfig,
    factor: Arc<Factor>,
}

impl FieldSampler {
    pub fn new(config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry();
        let n = geometry.len();
        let pts: Vec<Point> = (0..n).map(|i| geometry.point(i)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| config.reference_cov(&pts[i], &pts[j]));
        let factor = Factor::new(cov, config.sigma_psi * config.sigma_psi)?;
        Ok(Self {
            config: config.clone(),
            factor: Arc::new(factor),
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelField {
        let n = self.factor.dim();
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shadowing = self.factor.mul_lower(&e);
        ChannelField::from_shadowing(&self.config, shadowing.iter().copied().collect())
            .expect("grid size matches factor")
    }
}

/// One draw of a shadowing field with covariance `sigma_psi^2 exp(-d/d_c)`.
pub fn generate_shadowing_field<R: Rng + ?Sized>(config: &FieldConfig, rng: &mut R) -> Result<ChannelField> {
    Ok(FieldSampler::new(config)?.sample(rng))
}

/// Noisy power measurement `y = P_RX(x) + n`, `n ~ N(0, sigma_n^2)`.
pub fn sample_measurement<R: Rng + ?Sized>(field: &ChannelField, x: &Point, sigma_n: f64, rng: &mut R) -> Result<f64> {
    let p = field.received_power_at(x)?;
    if sigma_n == 0.0 {
        return Ok(p);
    }
    let noise = Normal::new(0.0, sigma_n).map_err(|e| Error::Config(e.to_string()))?;
    Ok(p + noise.sample(rng))
}

/// Location-error standard deviations, i.i.d. exponential with mean `lambda`.
pub fn draw_location_errors<R: Rng + ?Sized>(n: usize, lambda: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let exp = Exp::new(1.0 / lambda).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..n).map(|_| exp.sample(rng)).collect())
}

/// Reported location distribution for a node at `x_true` whose positioning
/// error has standard deviation `sigma`: the mean is a noisy copy of the
/// truth, the covariance is the true error covariance.
pub fn perturb_location<R: Rng + ?Sized>(
    x_true: &Point,
    sigma: f64,
    dim: Dim,
    rng: &mut R,
) -> Result<LocationDistribution> {
    let truth = LocationDistribution::isotropic(*x_true, sigma, dim)?;
    let z = truth.sample(rng);
    LocationDistribution::isotropic(z, sigma, dim)
}

/// `count` distinct grid indices chosen uniformly, in ascending order.
pub fn choose_grid_indices<R: Rng + ?Sized>(len: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > len {
        return Err(Error::Config(format!("cannot choose {count} of {len} grid points")));
    }
    let mut idx = rand::seq::index::sample(rng, len, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn small() -> FieldConfig {
        FieldConfig {
            extent_min: point1(20.0),
            extent_max: point1(60.0),
            resolution: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn reference_cov_values() {
        let c = FieldConfig::default();
        let a = point1(50.0);
        assert_eq!(c.reference_cov(&a, &a), 100.0);
        let b = point1(65.0);
        assert!((c.reference_cov(&a, &b) - 100.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn default_grid_has_721_points() {
        let g = FieldConfig::default().geometry();
        assert_eq!(g.len(), 721);
        assert_eq!(g.point(0).x, 20.0);
        assert_eq!(g.max().x, 200.0);
    }

    #[test]
    fn nearest_lookup_and_ties() {
        let mut rng = stream(3, &[]);
        let f = generate_shadowing_field(&small(), &mut rng).unwrap();
        assert_eq!(f.received_power_at(&point1(21.0)).unwrap(), f.power()[2]);
        // midway between index 2 (21.0) and 3 (21.5)
        assert_eq!(f.received_power_at(&point1(21.25)).unwrap(), f.power()[2]);
        assert_eq!(f.received_power_at(&point1(21.26)).unwrap(), f.power()[3]);
        assert!(matches!(
            f.received_power_at(&point1(19.0)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(f.received_power_at(&point1(60.2)).is_err());
    }

    #[test]
    fn zero_shadowing_power_is_path_loss() {
        let cfg = FieldConfig {
            extent_min: point1(90.0),
            extent_max: point1(110.0),
            ..Default::default()
        };
        let n = cfg.geometry().len();
        let f = ChannelField::from_shadowing(&cfg, vec![0.0; n]).unwrap();
        assert!((f.received_power_at(&point1(100.0)).unwrap() - (-60.0)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_field() {
        let a = generate_shadowing_field(&small(), &mut stream(9, &[1])).unwrap();
        let b = generate_shadowing_field(&small(), &mut stream(9, &[1])).unwrap();
        assert_eq!(a, b);
        let c = generate_shadowing_field(&small(), &mut stream(9, &[2])).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn power_minus_shadowing_is_path_loss() {
        let cfg = small();
        let f = generate_shadowing_field(&cfg, &mut stream(1, &[])).unwrap();
        for ((x, s), p) in f.grid().iter().zip(f.shadowing()).zip(f.power()) {
            let pl = path_loss_mean(x, cfg.l0, cfg.eta);
            assert!((p - s - pl).abs() <= 1e-12 * pl.abs());
        }
    }

    #[test]
    fn config_errors() {
        let mut c = small();
        c.resolution = 100.0;
        assert!(c.validate().is_err());
        let c = FieldConfig {
            extent_min: point1(0.0),
            ..small()
        };
        assert!(c.validate().is_err(), "origin on the grid");
        let c = FieldConfig {
            sigma_psi: 0.0,
            ..small()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn measurement_without_noise_is_exact() {
        let f = generate_shadowing_field(&small(), &mut stream(1, &[])).unwrap();
        let x = point1(30.0);
        let y = sample_measurement(&f, &x, 0.0, &mut stream(2, &[])).unwrap();
        assert_eq!(y, f.received_power_at(&x).unwrap());
    }

    #[test]
    fn measurement_noise_moments() {
        let f = generate_shadowing_field(&small(), &mut stream(1, &[])).unwrap();
        let x = point1(30.0);
        let truth = f.received_power_at(&x).unwrap();
        let mut rng = stream(4, &[]);
        let n = 100_000;
        let sigma_n = 0.01;
        let ys: Vec<f64> = (0..n)
            .map(|_| sample_measurement(&f, &x, sigma_n, &mut rng).unwrap())
            .collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - truth).abs() < 3.0 * sigma_n / (n as f64).sqrt());
        assert!((var / 1e-4 - 1.0).abs() < 0.05);
    }

    #[test]
    fn location_errors_moments() {
        assert_eq!(draw_location_errors(5, 0.0, &mut stream(1, &[])).unwrap(), vec![0.0; 5]);
        assert!(draw_location_errors(5, -1.0, &mut stream(1, &[])).is_err());
        let s = draw_location_errors(100_000, 8.0, &mut stream(1, &[])).unwrap();
        assert!(s.iter().all(|&v| v >= 0.0));
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean / 8.0 - 1.0).abs() < 0.02);
        assert!((std / 8.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn perturbation_zero_sigma_is_exact() {
        let x = Point::new(30.0, 40.0);
        let u = perturb_location(&x, 0.0, Dim::Two, &mut stream(1, &[])).unwrap();
        assert_eq!(u.mean(), x);
        assert!(u.is_exact());
    }

    #[test]
    fn perturbation_moments_2d() {
        let x = Point::new(30.0, 40.0);
        let mut rng = stream(5, &[]);
        let n = 100_000;
        let mut sum = Point::zeros();
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for _ in 0..n {
            let u = perturb_location(&x, 5.0, Dim::Two, &mut rng).unwrap();
            assert_eq!(u.cov()[(0, 0)], 25.0);
            let e = u.mean() - x;
            sum += e;
            sxx += e.x * e.x;
            syy += e.y * e.y;
            sxy += e.x * e.y;
        }
        let nf = n as f64;
        let bound = 3.0 * 5.0 / nf.sqrt();
        assert!((sum.x / nf).abs() < bound && (sum.y / nf).abs() < bound);
        assert!((sxx / nf / 25.0 - 1.0).abs() < 0.05);
        assert!((syy / nf / 25.0 - 1.0).abs() < 0.05);
        assert!((sxy / nf).abs() < 0.05 * 25.0);
    }

    #[test]
    fn csv_has_header_and_one_row_per_point() {
        let f = generate_shadowing_field(&small(), &mut stream(1, &[])).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "loc_x,shadowing_db,power_dbm");
        assert_eq!(lines.len(), f.len() + 1);
        let cols: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols[2], f.power()[0]);
    }
}
