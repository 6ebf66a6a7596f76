//! Offline estimate of the process noise that a squared-exponential model
//! needs to explain exponentially correlated shadowing.

use crate::error::{Error, Result};
use crate::field::{choose_grid_indices, sample_measurement, FieldConfig, FieldSampler};
use crate::geometry::LocationDistribution;
use crate::kernels::KernelExponent;
use crate::rng::stream;

use super::learn::{learn_classical, LearnOptions};
use super::{KnownParams, TrainingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub n_realizations: usize,
    pub n_train: usize,
    pub seed: u64,
    pub learn: LearnOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_realizations: 40,
            n_train: 100,
            seed: 0x5eed,
            learn: LearnOptions::default(),
        }
    }
}

/// Average `sigma_proc` learned with a `p = 2` kernel on exact, noisy
/// measurements of fields drawn from `config`.
pub fn calibrate_sigma_proc_offline(config: &FieldConfig, opts: &CalibrationOptions) -> Result<f64> {
    if opts.n_realizations == 0 {
        return Err(Error::Config("calibration needs at least one realization".into()));
    }
    let sampler = FieldSampler::new(config)?;
    let known = KnownParams {
        l0: config.l0,
        sigma_n: config.sigma_n,
    };
    let mut total = 0.0;
    for r in 0..opts.n_realizations as u64 {
        let field = sampler.sample(&mut stream(opts.seed, &[r, 0]));
        let mut rng = stream(opts.seed, &[r, 1]);
        let idx = choose_grid_indices(field.len(), opts.n_train, &mut rng)?;
        let mut inputs = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in &idx {
            let x = field.grid()[i];
            inputs.push(LocationDistribution::exact(x, config.dim));
            y.push(sample_measurement(&field, &x, config.sigma_n, &mut rng)?);
        }
        let data = TrainingSet::new(inputs, y)?;
        let model = learn_classical(&data, &known, KernelExponent::Two, true, &opts.learn)?;
        total += model.theta.sigma_proc;
    }
    Ok(total / opts.n_realizations as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatch_gives_positive_process_noise() {
        let opts = CalibrationOptions {
            n_realizations: 8,
            ..Default::default()
        };
        let s = calibrate_sigma_proc_offline(&FieldConfig::default(), &opts).unwrap();
        assert!(s > 0.0);
    }

    #[test]
    fn matched_truth_gives_little_process_noise() {
        let cfg = FieldConfig {
            truth_kernel: KernelExponent::Two,
            ..Default::default()
        };
        let opts = CalibrationOptions {
            n_realizations: 8,
            ..Default::default()
        };
        let s = calibrate_sigma_proc_offline(&cfg, &opts).unwrap();
        assert!(s <= 0.1 * cfg.sigma_psi, "{s}");
    }
}
