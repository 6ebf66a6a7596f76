//! Least-squares path-loss fit followed by grid-search maximum likelihood.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{
    correlation_matrix, expected_correlation_matrix, expected_log10, mean_correction, Hyperparameters, KernelExponent,
    PolyLogApprox,
};
use crate::linalg::{self, Factor, SpectralGram};

use super::{Diagnostics, KnownParams, LearnedModel, ModelKind, TrainingSet};

/// Distance feature used in the path-loss regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    /// `-10 log10 |z_i|`.
    Classical,
    /// `-10 E[log10 |x_i|]`.
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOptions {
    /// Candidate correlation distances.
    pub d_c_grid: Vec<f64>,
    /// Number of points on the amplitude axis (`sigma_psi` or `sigma_proc`).
    pub amplitude_points: usize,
    /// Without process noise the `sigma_psi` axis is not tied to the variance
    /// budget; it spans `(0, factor * sigma_tot]`.
    pub no_proc_psi_factor: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            d_c_grid: log_spaced(0.5, 60.0, 60),
            amplitude_points: 40,
            no_proc_psi_factor: 2.0,
        }
    }
}

pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Least-squares path-loss exponent and the demeaned observations.
pub fn estimate_eta_ls(data: &TrainingSet, kind: Regressor, known: &KnownParams) -> Result<(f64, Vec<f64>)> {
    let approx = PolyLogApprox::relative();
    let h: Vec<f64> = match kind {
        Regressor::Classical => data
            .inputs()
            .iter()
            .map(|u| {
                let d = u.mean().norm();
                if d > 0.0 {
                    Ok(-10.0 * d.log10())
                } else {
                    Err(Error::Domain("location coincides with the transmitter".into()))
                }
            })
            .collect::<Result<_>>()?,
        Regressor::Expected => data
            .inputs()
            .iter()
            .map(|u| Ok(-10.0 * expected_log10(u, approx)?.value))
            .collect::<Result<_>>()?,
    };
    let hh: f64 = h.iter().map(|v| v * v).sum();
    if !(hh > 0.0) || !hh.is_finite() {
        return Err(Error::RankDeficient("path-loss regressor is zero".into()));
    }
    let hy: f64 = h.iter().zip(data.y()).map(|(h, y)| h * (y - known.l0)).sum();
    let eta = hy / hh;
    let residuals = h.iter().zip(data.y()).map(|(h, y)| y - known.l0 - h * eta).collect();
    Ok((eta, residuals))
}

/// `log|K| + r^T K^{-1} r` with jitter scaled by the shadowing variance.
pub fn nll(theta: &Hyperparameters, residuals: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    let scale = theta.sigma_psi * theta.sigma_psi + theta.sigma_n * theta.sigma_n;
    linalg::nll(&DVector::from_column_slice(residuals), gram, scale)
}

fn total_variance(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64
}

struct GridBest {
    i: usize,
    j: usize,
    value: f64,
}

fn argmin(surface: &DMatrix<f64>) -> Result<GridBest> {
    let mut best = GridBest {
        i: 0,
        j: 0,
        value: f64::INFINITY,
    };
    for i in 0..surface.nrows() {
        for j in 0..surface.ncols() {
            if surface[(i, j)] < best.value {
                best = GridBest {
                    i,
                    j,
                    value: surface[(i, j)],
                };
            }
        }
    }
    if best.value.is_finite() {
        Ok(best)
    } else {
        Err(Error::NotPositiveDefinite {
            max_jitter: linalg::JITTER_LADDER[linalg::JITTER_LADDER.len() - 1],
        })
    }
}

/// Spectral NLL of `a R + c I`, with the same floor on `c` as the first
/// jitter step so that a noiseless model stays finite.
fn spectral_nll(s: &SpectralGram, a: f64, c: f64) -> f64 {
    s.nll(a, c.max(1e-10 * a))
}

/// Grid-search learning with a classical kernel on the reported means.
///
/// With `estimate_proc` the grid runs over `(d_c, sigma_psi)` and
/// `sigma_proc` closes the variance budget; without it `sigma_proc = 0`.
pub fn learn_classical(
    data: &TrainingSet,
    known: &KnownParams,
    p: KernelExponent,
    estimate_proc: bool,
    opts: &LearnOptions,
) -> Result<LearnedModel> {
    let (eta, residuals) = estimate_eta_ls(data, Regressor::Classical, known)?;
    let tot2 = total_variance(&residuals);
    let noise2 = known.sigma_n * known.sigma_n;
    if tot2 <= noise2 {
        return Err(Error::DegenerateData(format!(
            "total variance {tot2} does not exceed the noise variance"
        )));
    }
    let budget = tot2 - noise2;
    let k = opts.amplitude_points.max(1);
    let top = if estimate_proc {
        budget.sqrt()
    } else {
        opts.no_proc_psi_factor * tot2.sqrt()
    };
    let psi: Vec<f64> = (1..=k).map(|j| top * j as f64 / k as f64).collect();

    let points = data.means();
    let ups = DVector::from_column_slice(&residuals);
    let mut surface = DMatrix::from_element(opts.d_c_grid.len(), k, f64::INFINITY);
    for (i, &d_c) in opts.d_c_grid.iter().enumerate() {
        let s = SpectralGram::new(correlation_matrix(&points, d_c, p), &ups);
        for (j, &sp) in psi.iter().enumerate() {
            let a = sp * sp;
            let proc2 = if estimate_proc { (budget - a).max(0.0) } else { 0.0 };
            surface[(i, j)] = spectral_nll(&s, a, proc2 + noise2);
        }
    }
    let best = argmin(&surface)?;
    let sigma_psi = psi[best.j];
    let sigma_proc = if estimate_proc {
        (budget - sigma_psi * sigma_psi).max(0.0).sqrt()
    } else {
        0.0
    };
    let kind = match (p, estimate_proc) {
        (_, false) => ModelKind::CgpNoProc,
        _ => ModelKind::Cgp,
    };
    Ok(LearnedModel {
        theta: Hyperparameters {
            sigma_n: known.sigma_n,
            sigma_proc,
            d_c: opts.d_c_grid[best.i],
            l0: known.l0,
            eta,
            sigma_psi,
            p,
        },
        kind,
        residuals,
        sigma_tot: tot2.sqrt(),
        converged: true,
        diagnostics: Diagnostics::Grid {
            d_c: opts.d_c_grid.clone(),
            second: psi,
            nll: surface,
        },
    })
}

/// Classical GP learning with the exponential kernel on the reported means.
pub fn learn_cgp(
    data: &TrainingSet,
    known: &KnownParams,
    estimate_proc: bool,
    opts: &LearnOptions,
) -> Result<LearnedModel> {
    learn_classical(data, known, KernelExponent::One, estimate_proc, opts)
}

fn expected_setup(data: &TrainingSet, known: &KnownParams) -> Result<(f64, Vec<f64>, f64)> {
    let (eta, residuals) = estimate_eta_ls(data, Regressor::Expected, known)?;
    let tot2 = total_variance(&residuals);
    Ok((eta, residuals, tot2))
}

fn expected_fixed_proc(
    data: &TrainingSet,
    known: &KnownParams,
    sigma_proc: f64,
    opts: &LearnOptions,
    with_correction: bool,
) -> Result<LearnedModel> {
    if !(sigma_proc >= 0.0) {
        return Err(Error::Config(format!("sigma_proc must be >= 0, got {sigma_proc}")));
    }
    let (eta, residuals, tot2) = expected_setup(data, known)?;
    let noise2 = known.sigma_n * known.sigma_n;
    let proc2 = sigma_proc * sigma_proc;
    let correction: Vec<f64> = if with_correction {
        let th = Hyperparameters {
            eta,
            ..Default::default()
        };
        data.inputs()
            .iter()
            .map(|u| mean_correction(u, &th, PolyLogApprox::relative()))
            .collect::<Result<_>>()?
    } else {
        vec![0.0; data.len()]
    };
    let mean_correction = correction.iter().sum::<f64>() / correction.len() as f64;
    let psi2 = tot2 - noise2 - proc2 - mean_correction;
    if !(psi2 > 0.0) {
        return Err(Error::DegenerateData(format!(
            "total variance {tot2} leaves no room for shadowing after noise, process and location terms"
        )));
    }
    let sigma_psi = psi2.sqrt();

    let ups = DVector::from_column_slice(&residuals);
    let mut surface = DMatrix::from_element(opts.d_c_grid.len(), 1, f64::INFINITY);
    for (i, &d_c) in opts.d_c_grid.iter().enumerate() {
        let r = expected_correlation_matrix(data.inputs(), d_c);
        let mut k = r * psi2;
        for (n, c) in correction.iter().enumerate() {
            k[(n, n)] += proc2 + noise2 + c;
        }
        if let Ok(f) = Factor::new(k, psi2) {
            surface[(i, 0)] = f.log_det() + f.quad_form(&ups);
        }
    }
    let best = argmin(&surface)?;
    Ok(LearnedModel {
        theta: Hyperparameters {
            sigma_n: known.sigma_n,
            sigma_proc,
            d_c: opts.d_c_grid[best.i],
            l0: known.l0,
            eta,
            sigma_psi,
            p: KernelExponent::Two,
        },
        kind: if with_correction {
            ModelKind::Gagp
        } else {
            ModelKind::Ugp
        },
        residuals,
        sigma_tot: tot2.sqrt(),
        converged: true,
        diagnostics: Diagnostics::Grid {
            d_c: opts.d_c_grid.clone(),
            second: vec![sigma_psi],
            nll: surface,
        },
    })
}

/// Learning on location distributions with the expected squared-exponential
/// kernel and the expected path-loss mean.
///
/// With `estimate_proc = false`, `sigma_proc` is held at `sigma_proc_offline`
/// and only `d_c` is searched; otherwise the grid runs over
/// `(d_c, sigma_proc)` and `sigma_psi` closes the variance budget.
pub fn learn_ugp(
    data: &TrainingSet,
    known: &KnownParams,
    sigma_proc_offline: f64,
    estimate_proc: bool,
    opts: &LearnOptions,
) -> Result<LearnedModel> {
    if !estimate_proc {
        return expected_fixed_proc(data, known, sigma_proc_offline, opts, false);
    }
    let (eta, residuals, tot2) = expected_setup(data, known)?;
    let noise2 = known.sigma_n * known.sigma_n;
    if tot2 <= noise2 {
        return Err(Error::DegenerateData(format!(
            "total variance {tot2} does not exceed the noise variance"
        )));
    }
    let budget = tot2 - noise2;
    let k = opts.amplitude_points.max(1);
    let procs: Vec<f64> = (0..k).map(|j| budget.sqrt() * j as f64 / k as f64).collect();
    let ups = DVector::from_column_slice(&residuals);
    let mut surface = DMatrix::from_element(opts.d_c_grid.len(), k, f64::INFINITY);
    for (i, &d_c) in opts.d_c_grid.iter().enumerate() {
        let s = SpectralGram::new(expected_correlation_matrix(data.inputs(), d_c), &ups);
        for (j, &sp) in procs.iter().enumerate() {
            let proc2 = sp * sp;
            surface[(i, j)] = spectral_nll(&s, budget - proc2, proc2 + noise2);
        }
    }
    let best = argmin(&surface)?;
    let sigma_proc = procs[best.j];
    Ok(LearnedModel {
        theta: Hyperparameters {
            sigma_n: known.sigma_n,
            sigma_proc,
            d_c: opts.d_c_grid[best.i],
            l0: known.l0,
            eta,
            sigma_psi: (budget - sigma_proc * sigma_proc).sqrt(),
            p: KernelExponent::Two,
        },
        kind: ModelKind::UgpProc,
        residuals,
        sigma_tot: tot2.sqrt(),
        converged: true,
        diagnostics: Diagnostics::Grid {
            d_c: opts.d_c_grid.clone(),
            second: procs,
            nll: surface,
        },
    })
}

/// Moment-matched learning: the expected kernel plus the diagonal variance of
/// the path-loss mean induced by location uncertainty.
pub fn learn_gagp(
    data: &TrainingSet,
    known: &KnownParams,
    sigma_proc_offline: f64,
    opts: &LearnOptions,
) -> Result<LearnedModel> {
    expected_fixed_proc(data, known, sigma_proc_offline, opts, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{choose_grid_indices, generate_shadowing_field, FieldConfig};
    use crate::geometry::{point1, Dim, LocationDistribution};
    use crate::rng::stream;

    fn exact_set(xs: &[f64], y: impl Fn(f64) -> f64) -> TrainingSet {
        let inputs = xs
            .iter()
            .map(|&x| LocationDistribution::exact(point1(x), Dim::One))
            .collect();
        TrainingSet::new(inputs, xs.iter().map(|&x| y(x)).collect()).unwrap()
    }

    fn simulated(seed: u64, n: usize) -> TrainingSet {
        let cfg = FieldConfig::default();
        let f = generate_shadowing_field(&cfg, &mut stream(seed, &[0])).unwrap();
        let idx = choose_grid_indices(f.len(), n, &mut stream(seed, &[1])).unwrap();
        let inputs = idx
            .iter()
            .map(|&i| LocationDistribution::exact(f.grid()[i], Dim::One))
            .collect();
        TrainingSet::new(inputs, idx.iter().map(|&i| f.power()[i]).collect()).unwrap()
    }

    #[test]
    fn eta_is_recovered_from_clean_path_loss() {
        let xs: Vec<f64> = (0..20).map(|k| 20.0 + 9.0 * k as f64).collect();
        let data = exact_set(&xs, |x| -10.0 - 25.0 * x.log10());
        for kind in [Regressor::Classical, Regressor::Expected] {
            let (eta, res) = estimate_eta_ls(&data, kind, &KnownParams::default()).unwrap();
            assert!((eta - 2.5).abs() < 1e-12);
            assert!(res.iter().all(|r| r.abs() < 1e-10));
        }
    }

    #[test]
    fn log_spacing_endpoints() {
        let g = log_spaced(0.5, 60.0, 60);
        assert_eq!(g.len(), 60);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[59] - 60.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - g[1] / g[0]).abs() < 1e-9));
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let xs: Vec<f64> = (0..10).map(|k| 20.0 + 9.0 * k as f64).collect();
        let data = exact_set(&xs, |x| -10.0 - 25.0 * x.log10());
        let r = learn_cgp(&data, &KnownParams::default(), true, &LearnOptions::default());
        assert!(matches!(r, Err(Error::DegenerateData(_))));
    }

    #[test]
    fn variance_budget_holds() {
        let data = simulated(3, 100);
        let known = KnownParams::default();
        let opts = LearnOptions::default();
        let models = [
            learn_cgp(&data, &known, true, &opts).unwrap(),
            learn_ugp(&data, &known, 2.0, false, &opts).unwrap(),
            learn_ugp(&data, &known, 0.0, true, &opts).unwrap(),
        ];
        for m in &models {
            let t = &m.theta;
            let lhs = t.sigma_psi.powi(2) + t.sigma_proc.powi(2) + t.sigma_n.powi(2);
            assert!((lhs / m.sigma_tot.powi(2) - 1.0).abs() < 1e-6, "{:?}", m.kind);
        }
    }

    #[test]
    fn spectral_grid_matches_direct_nll_at_the_optimum() {
        let data = simulated(4, 60);
        let m = learn_cgp(&data, &KnownParams::default(), true, &LearnOptions::default()).unwrap();
        let gram = crate::kernels::gram_classical(&data.means(), &m.theta);
        let direct = nll(&m.theta, &m.residuals, &gram).unwrap();
        if let Diagnostics::Grid { nll: s, .. } = &m.diagnostics {
            let best = s.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                (best - direct).abs() < 1e-6 * direct.abs().max(1.0),
                "{best} vs {direct}"
            );
        } else {
            panic!("grid diagnostics expected");
        }
    }

    #[test]
    fn gagp_reduces_to_ugp_without_uncertainty() {
        let data = simulated(5, 60);
        let known = KnownParams::default();
        let opts = LearnOptions::default();
        let a = learn_ugp(&data, &known, 1.5, false, &opts).unwrap();
        let b = learn_gagp(&data, &known, 1.5, &opts).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn ugp_at_exact_locations_matches_squared_exponential_cgp() {
        let data = simulated(6, 80);
        let known = KnownParams::default();
        let opts = LearnOptions::default();
        let u = learn_ugp(&data, &known, 0.0, true, &opts).unwrap();
        let c = learn_classical(&data, &known, KernelExponent::Two, true, &opts).unwrap();
        let step = opts.d_c_grid[1] / opts.d_c_grid[0];
        assert!((u.theta.d_c / c.theta.d_c).ln().abs() <= step.ln() + 1e-12);
        let amp = c.sigma_tot / opts.amplitude_points as f64;
        assert!((u.theta.sigma_psi - c.theta.sigma_psi).abs() <= 2.0 * amp);
    }

    #[test]
    fn nll_is_permutation_invariant() {
        let data = simulated(7, 30);
        let th = Hyperparameters {
            sigma_proc: 1.0,
            ..Default::default()
        };
        let (_, res) = estimate_eta_ls(&data, Regressor::Classical, &KnownParams::default()).unwrap();
        let pts = data.means();
        let a = nll(&th, &res, &crate::kernels::gram_classical(&pts, &th)).unwrap();
        let perm: Vec<usize> = (0..pts.len()).rev().collect();
        let pts2: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let res2: Vec<f64> = perm.iter().map(|&i| res[i]).collect();
        let b = nll(&th, &res2, &crate::kernels::gram_classical(&pts2, &th)).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }
}
