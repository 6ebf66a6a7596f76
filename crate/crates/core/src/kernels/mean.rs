//! Expected path-loss mean under Gaussian location uncertainty.
//!
//! The distance `d = |x|` is approximated as `N(|z|, z^T Sigma z / |z|^2)`,
//! valid while `|z| / sigma >= 3`. Writing `d = |z| v`, `log10 d = log10 |z| +
//! log10 v` and `log10 v` is replaced by a polynomial fitted on a fixed range of
//! the relative distance `v`, so one fit serves every `|z|`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::LocationDistribution;
use crate::rng::{seed_from_f64s, stream};

use super::poly::{gaussian_raw_moments, PolyLogApprox, POLY_TOLERANCE};
use super::Hyperparameters;

/// Monte Carlo sample budget when the Gaussian approximation is not valid.
pub const FALLBACK_SAMPLES: usize = 100_000;
const MIN_RATIO: f64 = 3.0;
const RELATIVE_RANGE: (f64, f64) = (0.25, 2.4);

impl PolyLogApprox {
    /// Shared fit of `log10 v` on the relative-distance range used by
    /// [`expected_log10`].
    pub fn relative() -> &'static PolyLogApprox {
        static FIT: OnceLock<PolyLogApprox> = OnceLock::new();
        FIT.get_or_init(|| {
            PolyLogApprox::auto(RELATIVE_RANGE.0, RELATIVE_RANGE.1, POLY_TOLERANCE)
                .expect("log10 fit on the relative range")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub value: f64,
    /// The Gaussian approximation was out of range and Monte Carlo was used.
    pub fallback: bool,
}

enum Route {
    Exact(f64),
    Poly {
        log_z: f64,
        coeffs: Vec<f64>,
        moments: Vec<f64>,
    },
    MonteCarlo,
}

fn route(u: &LocationDistribution, approx: &PolyLogApprox, extra_degree: usize) -> Result<Route> {
    let (lo, hi) = approx.fit_range();
    if !(lo < 1.0 && hi > 1.0) {
        return Err(Error::Config("relative log10 fit must bracket 1".into()));
    }
    let z = u.mean().norm();
    if u.is_exact() {
        if z == 0.0 {
            return Err(Error::Domain("location coincides with the transmitter".into()));
        }
        return Ok(Route::Exact(z.log10()));
    }
    let sigma = u.max_variance().sqrt();
    if z < MIN_RATIO * sigma {
        return Ok(Route::MonteCarlo);
    }
    let s_t = u.radial_variance().sqrt() / z * approx.t_scale();
    let coeffs = approx.shifted_coeffs(approx.to_t(1.0));
    let moments = gaussian_raw_moments(0.0, s_t, approx.degree() * (1 + extra_degree));
    // anchor the fit at v = 1 so that the result is continuous as sigma -> 0
    let log_z = z.log10() - coeffs[0];
    Ok(Route::Poly { log_z, coeffs, moments })
}

fn monte_carlo(u: &LocationDistribution) -> (f64, f64) {
    let c = u.cov();
    let m = u.mean();
    let mut rng = stream(seed_from_f64s(&[m.x, m.y, c[(0, 0)], c[(0, 1)], c[(1, 1)]]), &[]);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..FALLBACK_SAMPLES {
        let w = u.sample(&mut rng).norm().log10();
        sum += w;
        sum_sq += w * w;
    }
    let n = FALLBACK_SAMPLES as f64;
    let mean = sum / n;
    (mean, (sum_sq / n - mean * mean).max(0.0))
}

/// `E[log10 |x|]` for `x ~ u`.
pub fn expected_log10(u: &LocationDistribution, approx: &PolyLogApprox) -> Result<MeanEstimate> {
    Ok(match route(u, approx, 0)? {
        Route::Exact(v) => MeanEstimate {
            value: v,
            fallback: false,
        },
        Route::Poly { log_z, coeffs, moments } => {
            let e: f64 = coeffs.iter().zip(&moments).map(|(b, m)| b * m).sum();
            MeanEstimate {
                value: log_z + e,
                fallback: false,
            }
        }
        Route::MonteCarlo => MeanEstimate {
            value: monte_carlo(u).0,
            fallback: true,
        },
    })
}

/// `Var[log10 |x|]` for `x ~ u`, from the squared polynomial.
pub fn log10_variance(u: &LocationDistribution, approx: &PolyLogApprox) -> Result<MeanEstimate> {
    Ok(match route(u, approx, 1)? {
        Route::Exact(_) => MeanEstimate {
            value: 0.0,
            fallback: false,
        },
        Route::Poly { coeffs, moments, .. } => {
            let n = coeffs.len();
            let mut sq = vec![0.0; 2 * n - 1];
            for i in 0..n {
                for j in 0..n {
                    sq[i + j] += coeffs[i] * coeffs[j];
                }
            }
            let e1: f64 = coeffs.iter().zip(&moments).map(|(b, m)| b * m).sum();
            let e2: f64 = sq.iter().zip(&moments).map(|(b, m)| b * m).sum();
            MeanEstimate {
                value: (e2 - e1 * e1).max(0.0),
                fallback: false,
            }
        }
        Route::MonteCarlo => MeanEstimate {
            value: monte_carlo(u).1,
            fallback: true,
        },
    })
}

/// `mu(u) = L0 - 10 eta E[log10 |x|]`.
pub fn expected_mean(
    u: &LocationDistribution,
    theta: &Hyperparameters,
    approx: &PolyLogApprox,
) -> Result<MeanEstimate> {
    let e = expected_log10(u, approx)?;
    Ok(MeanEstimate {
        value: theta.l0 - 10.0 * theta.eta * e.value,
        fallback: e.fallback,
    })
}

/// Variance of the path-loss mean induced by location uncertainty,
/// `(10 eta)^2 Var[log10 |x|]`, the diagonal correction of the moment-matched
/// likelihood.
pub fn mean_correction(u: &LocationDistribution, theta: &Hyperparameters, approx: &PolyLogApprox) -> Result<f64> {
    let k = 10.0 * theta.eta;
    Ok(k * k * log10_variance(u, approx)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point1, Dim, Point};
    use rand::Rng;

    fn mc_log10(u: &LocationDistribution, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = stream(seed, &[]);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let w = u.sample(&mut rng).norm().log10();
            s += w;
            s2 += w * w;
        }
        let m = s / n as f64;
        (m, s2 / n as f64 - m * m)
    }

    #[test]
    fn relative_fit_degree_and_error() {
        let p = PolyLogApprox::relative();
        assert!(p.max_err() <= POLY_TOLERANCE);
        assert!(p.degree() <= 12);
    }

    #[test]
    fn exact_location_gives_path_loss() {
        let th = Hyperparameters::default();
        let u = LocationDistribution::exact(point1(100.0), Dim::One);
        let m = expected_mean(&u, &th, PolyLogApprox::relative()).unwrap();
        assert_eq!(m.value, -60.0);
        assert!(!m.fallback);
    }

    #[test]
    fn origin_is_rejected() {
        let u = LocationDistribution::exact(Point::zeros(), Dim::Two);
        assert!(expected_log10(&u, PolyLogApprox::relative()).is_err());
    }

    #[test]
    fn uncertain_mean_matches_monte_carlo_and_jensen() {
        let th = Hyperparameters::default();
        let u = LocationDistribution::isotropic(point1(100.0), 10.0, Dim::One).unwrap();
        let m = expected_mean(&u, &th, PolyLogApprox::relative()).unwrap();
        let (mc, _) = mc_log10(&u, 1_000_000, 5);
        assert!(!m.fallback);
        assert!((m.value - (th.l0 - 25.0 * mc)).abs() < 25.0 * 1e-2);
        assert!(mc < 2.0);
        assert!(m.value > -60.0);
    }

    #[test]
    fn fallback_is_flagged_and_agrees_near_the_boundary() {
        let th = Hyperparameters::default();
        let approx = PolyLogApprox::relative();
        let inside = LocationDistribution::isotropic(point1(60.0), 19.9, Dim::One).unwrap();
        let outside = LocationDistribution::isotropic(point1(60.0), 20.1, Dim::One).unwrap();
        let a = expected_mean(&inside, &th, approx).unwrap();
        let b = expected_mean(&outside, &th, approx).unwrap();
        assert!(!a.fallback && b.fallback);
        assert!((a.value - b.value).abs() < 25.0 * 1e-2, "{} vs {}", a.value, b.value);
    }

    #[test]
    fn variance_matches_monte_carlo() {
        let th = Hyperparameters::default();
        let u = LocationDistribution::isotropic(point1(100.0), 10.0, Dim::One).unwrap();
        let (_, var) = mc_log10(&u, 1_000_000, 6);
        let delta = mean_correction(&u, &th, PolyLogApprox::relative()).unwrap();
        assert!((delta / (625.0 * var) - 1.0).abs() < 1e-2, "{delta} vs {}", 625.0 * var);
    }

    #[test]
    fn variance_vanishes_without_uncertainty_or_slope() {
        let approx = PolyLogApprox::relative();
        let exact = LocationDistribution::exact(point1(80.0), Dim::One);
        assert_eq!(
            mean_correction(&exact, &Hyperparameters::default(), approx).unwrap(),
            0.0
        );
        let u = LocationDistribution::isotropic(point1(80.0), 8.0, Dim::One).unwrap();
        let flat = Hyperparameters {
            eta: 0.0,
            ..Default::default()
        };
        assert_eq!(mean_correction(&u, &flat, approx).unwrap(), 0.0);
    }

    #[test]
    fn random_pairs_in_the_valid_region() {
        let th = Hyperparameters::default();
        let approx = PolyLogApprox::relative();
        let mut rng = stream(8, &[]);
        for k in 0..10 {
            let z = rng.random_range(20.0..200.0);
            let s = rng.random_range(0.0..z / 3.0);
            let u = LocationDistribution::isotropic(point1(z), s, Dim::One).unwrap();
            let m = expected_mean(&u, &th, approx).unwrap();
            let (mc, _) = mc_log10(&u, 200_000, 100 + k);
            assert!((m.value - (th.l0 - 25.0 * mc)).abs() < 25.0 * 1e-2, "z={z} s={s}");
        }
    }
}
