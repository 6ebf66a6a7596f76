//! Monte Carlo marginal likelihood over sampled input locations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{Hyperparameters, KernelExponent};
use crate::linalg::{log_gaussian_density, log_sum_exp, Factor};
use crate::simplex::{minimize, SimplexOptions};

use super::{Diagnostics, KnownParams, LearnedModel, ModelKind, TrainingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct McgpOptions {
    /// Number of sampled location sets `M`.
    pub samples: usize,
    pub simplex: SimplexOptions,
}

impl Default for McgpOptions {
    fn default() -> Self {
        Self {
            samples: 300,
            simplex: SimplexOptions::default(),
        }
    }
}

/// Location sets drawn once from the input distributions and reused for
/// every objective evaluation.
#[derive(Debug, Clone)]
pub struct McgpSamples {
    log10_dist: Vec<DVector<f64>>,
    pair_dist: Vec<DMatrix<f64>>,
    /// Number of draws the objective averages over.
    nominal: usize,
}

impl McgpSamples {
    /// Draw `m` location sets. When every input is exact all draws coincide
    /// and only one set is stored.
    pub fn draw<R: Rng + ?Sized>(data: &TrainingSet, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("MCGP needs at least one sample".into()));
        }
        let n = data.len();
        let distinct = if data.all_exact() { 1 } else { m };
        let mut log10_dist = Vec::with_capacity(distinct);
        let mut pair_dist = Vec::with_capacity(distinct);
        for _ in 0..distinct {
            let xs: Vec<_> = data.inputs().iter().map(|u| u.sample(rng)).collect();
            let mut l = DVector::zeros(n);
            for (i, x) in xs.iter().enumerate() {
                let d = x.norm();
                if d == 0.0 {
                    return Err(Error::Domain("sampled location coincides with the transmitter".into()));
                }
                l[i] = d.log10();
            }
            let d = DMatrix::from_fn(n, n, |i, j| (xs[i] - xs[j]).norm());
            log10_dist.push(l);
            pair_dist.push(d);
        }
        Ok(Self {
            log10_dist,
            pair_dist,
            nominal: m,
        })
    }

    pub fn len(&self) -> usize {
        self.nominal
    }

    pub fn is_empty(&self) -> bool {
        self.nominal == 0
    }
}

fn sample_log_density(
    samples: &McgpSamples,
    k: usize,
    y: &DVector<f64>,
    known: &KnownParams,
    theta: &Hyperparameters,
) -> f64 {
    let d = &samples.pair_dist[k];
    let n = d.nrows();
    let a = theta.sigma_psi * theta.sigma_psi;
    let c = theta.sigma_proc * theta.sigma_proc + known.sigma_n * known.sigma_n;
    let mut gram = DMatrix::zeros(n, n);
    for j in 0..n {
        gram[(j, j)] = a + c;
        for i in j + 1..n {
            let v = a * (-d[(i, j)] / theta.d_c).exp();
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let Ok(factor) = Factor::new(gram, a.max(c)) else {
        return f64::NEG_INFINITY;
    };
    let r = y - DVector::from_element(n, known.l0) + &samples.log10_dist[k] * (10.0 * theta.eta);
    log_gaussian_density(&r, &factor)
}

/// `-log((1/M) sum_m N(y; mu(X^m), K(X^m)))` with the exponential kernel.
pub fn mcgp_objective(samples: &McgpSamples, y: &[f64], known: &KnownParams, theta: &Hyperparameters) -> f64 {
    let y = DVector::from_column_slice(y);
    let logs: Vec<f64> = (0..samples.log10_dist.len())
        .map(|k| sample_log_density(samples, k, &y, known, theta))
        .collect();
    if samples.log10_dist.len() == 1 {
        return -logs[0];
    }
    -(log_sum_exp(&logs) - (samples.nominal as f64).ln())
}

fn theta_from(x: &[f64], known: &KnownParams) -> Hyperparameters {
    Hyperparameters {
        sigma_n: known.sigma_n,
        sigma_proc: x[3].abs(),
        d_c: x[1].exp(),
        l0: known.l0,
        eta: x[0],
        sigma_psi: x[2].abs(),
        p: KernelExponent::One,
    }
}

/// Joint simplex optimization of `(eta, d_c, sigma_psi, sigma_proc)` on the
/// Monte Carlo likelihood, started from `init`.
pub fn learn_mcgp<R: Rng + ?Sized>(
    data: &TrainingSet,
    known: &KnownParams,
    init: &Hyperparameters,
    opts: &McgpOptions,
    rng: &mut R,
) -> Result<LearnedModel> {
    init.validate()?;
    let samples = McgpSamples::draw(data, opts.samples, rng)?;
    // a zero start would give the simplex a vanishing edge along that axis
    let proc0 = init.sigma_proc.max(0.1 * init.sigma_psi);
    let x0 = [init.eta, init.d_c.ln(), init.sigma_psi, proc0];
    let result = minimize(
        |x| mcgp_objective(&samples, data.y(), known, &theta_from(x, known)),
        &x0,
        &opts.simplex,
    );
    if !result.value.is_finite() {
        return Err(Error::NotPositiveDefinite {
            max_jitter: crate::linalg::JITTER_LADDER[5],
        });
    }
    let theta = theta_from(&result.x, known);
    let residuals: Vec<f64> = data
        .inputs()
        .iter()
        .zip(data.y())
        .map(|(u, y)| y - known.l0 + 10.0 * theta.eta * u.mean().norm().log10())
        .collect();
    let sigma_tot = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    if !result.converged {
        log::warn!(
            "MCGP simplex stopped after {} iterations without converging",
            result.iterations
        );
    }
    Ok(LearnedModel {
        theta,
        kind: ModelKind::Mcgp,
        residuals,
        sigma_tot,
        converged: result.converged,
        diagnostics: Diagnostics::Simplex(result),
    })
}
