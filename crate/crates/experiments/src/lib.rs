//! Monte Carlo sweeps over location uncertainty: hyperparameter learning,
//! prediction with uncertain training or test inputs, and rate allocation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod learning;
mod prediction;
mod resource;
pub mod stats;

pub use learning::{learn_realization, run_learning_sweep};
pub use prediction::{compute_prx_avg, run_prediction_uncertain_test, run_prediction_uncertain_training, PrxAverage};
pub use resource::{allocation_metrics, auto_noise_floor_dbm, rate_bits, run_resource_allocation, Allocation};

use std::fmt::Write as _;

use chanpred_core::field::{
    choose_grid_indices, draw_location_errors, perturb_location, sample_measurement, ChannelField, FieldConfig,
};
use chanpred_core::gp::{
    calibrate_sigma_proc_offline, CalibrationOptions, LearnOptions, ModelKind, SimulatedTraining, TrainingSet,
};
use chanpred_core::rng::{derive_seed, stream};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] chanpred_core::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub field: FieldConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean location-error std devs for uncertain training.
    pub lambda_sweep: Vec<f64>,
    /// Test-location std devs for uncertain testing.
    pub sigma_sweep: Vec<f64>,
    /// Confidence parameters for rate allocation.
    pub alpha_sweep: Vec<f64>,
    /// Training uncertainty levels used by the rate-allocation experiment.
    pub resource_lambdas: Vec<f64>,
    pub n_realizations: usize,
    /// Monte Carlo sample count `M`.
    pub mc_samples: usize,
    pub methods: Vec<ModelKind>,
    /// Receiver noise power in mW; `None` places the median SNR at 10 dB.
    pub w_lin: Option<f64>,
    pub master_seed: u64,
    /// Process noise for the expected-kernel learners; `None` runs the
    /// offline calibration.
    pub sigma_proc_offline: Option<f64>,
    pub calibration_realizations: usize,
    /// Draws per target of the averaged received power.
    pub prx_avg_budget: usize,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::default(),
            n_train: 100,
            n_test: 100,
            lambda_sweep: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            sigma_sweep: vec![0.0, 1.0, 2.0, 3.0, 5.0, 8.0],
            alpha_sweep: (0..=12).map(|k| 0.25 * k as f64).collect(),
            resource_lambdas: vec![0.0, 10.0],
            n_realizations: 40,
            mc_samples: 300,
            methods: vec![ModelKind::Cgp, ModelKind::CgpNoProc, ModelKind::Ugp],
            w_lin: None,
            master_seed: 1,
            sigma_proc_offline: None,
            calibration_realizations: 40,
            prx_avg_budget: 10_000,
            workers: 0,
        }
    }
}

fn check_sweep(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(ExperimentError::Config(format!("{name} must not be empty")));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ExperimentError::Config(format!(
            "{name} values must be finite and >= 0"
        )));
    }
    if v.windows(2).any(|w| w[1] < w[0]) {
        return Err(ExperimentError::Config(format!("{name} must be nondecreasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        check_sweep("lambda_sweep", &self.lambda_sweep)?;
        check_sweep("sigma_sweep", &self.sigma_sweep)?;
        check_sweep("alpha_sweep", &self.alpha_sweep)?;
        check_sweep("resource_lambdas", &self.resource_lambdas)?;
        for (name, v) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_realizations", self.n_realizations),
            ("mc_samples", self.mc_samples),
            ("calibration_realizations", self.calibration_realizations),
        ] {
            if v < 1 {
                return Err(ExperimentError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_train < 2 {
            return Err(ExperimentError::Config("n_train must be >= 2".into()));
        }
        if self.prx_avg_budget < 10_000 {
            return Err(ExperimentError::Config("prx_avg_budget must be >= 10000".into()));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::Config("at least one method is required".into()));
        }
        if self.n_train + self.n_test > self.field.geometry().len() {
            return Err(ExperimentError::Config(
                "n_train + n_test exceeds the number of grid points".into(),
            ));
        }
        if let Some(w) = self.w_lin {
            if !(w > 0.0) {
                return Err(ExperimentError::Config("w_lin must be > 0".into()));
            }
        }
        if let Some(s) = self.sigma_proc_offline {
            if !(s >= 0.0) {
                return Err(ExperimentError::Config("sigma_proc_offline must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Process noise for the expected-kernel learners, calibrating if needed.
    pub fn resolve_sigma_proc(&self) -> Result<f64> {
        if let Some(s) = self.sigma_proc_offline {
            return Ok(s);
        }
        let opts = CalibrationOptions {
            n_realizations: self.calibration_realizations,
            n_train: self.n_train,
            seed: derive_seed(self.master_seed, &[tags::CALIBRATION]),
            learn: LearnOptions::default(),
        };
        Ok(calibrate_sigma_proc_offline(&self.field, &opts)?)
    }

    /// Every parameter as `key=value` lines.
    pub fn dump(&self) -> String {
        let f = &self.field;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "dim={}", f.dim.count());
        let _ = writeln!(
            s,
            "extent_min={}",
            list(&[f.extent_min.x, f.extent_min.y][..f.dim.count()])
        );
        let _ = writeln!(
            s,
            "extent_max={}",
            list(&[f.extent_max.x, f.extent_max.y][..f.dim.count()])
        );
        let _ = writeln!(s, "resolution={}", f.resolution);
        let _ = writeln!(s, "sigma_psi={}", f.sigma_psi);
        let _ = writeln!(s, "d_c={}", f.d_c);
        let _ = writeln!(s, "l0={}", f.l0);
        let _ = writeln!(s, "eta={}", f.eta);
        let _ = writeln!(s, "sigma_n={}", f.sigma_n);
        let _ = writeln!(s, "truth_kernel={}", f.truth_kernel.value());
        let _ = writeln!(s, "seed={}", self.master_seed);
        let _ = writeln!(s, "n_train={}", self.n_train);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "lambda_sweep={}", list(&self.lambda_sweep));
        let _ = writeln!(s, "sigma_sweep={}", list(&self.sigma_sweep));
        let _ = writeln!(s, "alpha_sweep={}", list(&self.alpha_sweep));
        let _ = writeln!(s, "resource_lambdas={}", list(&self.resource_lambdas));
        let _ = writeln!(s, "n_realizations={}", self.n_realizations);
        let _ = writeln!(s, "mc_samples={}", self.mc_samples);
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(s, "methods={}", methods.join(","));
        match self.w_lin {
            Some(w) => {
                let _ = writeln!(s, "w_lin={w}");
            }
            None => {
                let w = 10f64.powf(auto_noise_floor_dbm(&self.field) / 10.0);
                let _ = writeln!(s, "w_lin={w}");
            }
        }
        if let Some(p) = self.sigma_proc_offline {
            let _ = writeln!(s, "sigma_proc_offline={p}");
        }
        let _ = writeln!(s, "calibration_realizations={}", self.calibration_realizations);
        let _ = writeln!(s, "prx_avg_budget={}", self.prx_avg_budget);
        s
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))
    }
}

/// One aggregated metric over the realizations of a sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "method,sweep_name,sweep_value,metric,mean,std,n";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method, self.sweep_name, self.sweep_value, self.metric, self.mean, self.std, self.n
        )
    }

    /// Canonical ordering for comparing result sets.
    pub fn sort_key(&self) -> (String, String, u64, String) {
        (
            self.method.clone(),
            self.sweep_name.clone(),
            self.sweep_value.to_bits(),
            self.metric.clone(),
        )
    }
}

/// A cell realization that did not produce a result.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRecord {
    pub method: String,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub realization: usize,
    pub error: String,
}

impl FailureRecord {
    pub const CSV_HEADER: &'static str = "method,sweep_name,sweep_value,realization,error";

    pub fn csv_row(&self) -> String {
        let msg = self.error.replace(['\n', '\r'], " ").replace('"', "'");
        format!(
            "{},{},{},{},\"{}\"",
            self.method, self.sweep_name, self.sweep_value, self.realization, msg
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub failures: Vec<FailureRecord>,
}

/// Receives the rows of each completed sweep point as soon as it finishes.
pub type Sink<'a> = &'a mut dyn FnMut(&[MetricRow], &[FailureRecord]);

pub(crate) mod tags {
    pub const FIELD: u64 = 1;
    pub const TRAIN_LOCATIONS: u64 = 2;
    pub const LOCATION_SIGMA: u64 = 3;
    pub const PERTURB: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const MCGP: u64 = 6;
    pub const TEST_LOCATIONS: u64 = 7;
    pub const TEST_PERTURB: u64 = 8;
    pub const TARGET: u64 = 9;
    pub const PREDICT: u64 = 10;
    pub const CALIBRATION: u64 = 11;
}

/// Training data for realization `r` at uncertainty level `lambda`.
///
/// Locations, noise and the standardized errors depend only on `r`, so a
/// realization sees the same field and the same error directions at every
/// sweep point; `lambda` only scales them.
pub(crate) fn simulate_training(
    cfg: &ExperimentConfig,
    field: &ChannelField,
    r: usize,
    lambda: f64,
    indices: &[usize],
) -> Result<SimulatedTraining> {
    let seed = cfg.master_seed;
    let r = r as u64;
    let sigmas = draw_location_errors(indices.len(), lambda, &mut stream(seed, &[tags::LOCATION_SIGMA, r]))?;
    let mut perturb = stream(seed, &[tags::PERTURB, r]);
    let mut noise = stream(seed, &[tags::NOISE, r]);
    let mut inputs = Vec::with_capacity(indices.len());
    let mut y = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for (&i, &s) in indices.iter().zip(&sigmas) {
        let x = field.grid()[i];
        inputs.push(perturb_location(&x, s, cfg.field.dim, &mut perturb)?);
        y.push(sample_measurement(field, &x, cfg.field.sigma_n, &mut noise)?);
        truth.push(x);
    }
    Ok(SimulatedTraining {
        data: TrainingSet::new(inputs, y)?,
        hidden_truth: truth,
    })
}

pub(crate) fn training_indices(cfg: &ExperimentConfig, field: &ChannelField, r: usize) -> Result<Vec<usize>> {
    Ok(choose_grid_indices(
        field.len(),
        cfg.n_train,
        &mut stream(cfg.master_seed, &[tags::TRAIN_LOCATIONS, r as u64]),
    )?)
}

pub(crate) fn field_for(sampler: &chanpred_core::FieldSampler, cfg: &ExperimentConfig, r: usize) -> ChannelField {
    sampler.sample(&mut stream(cfg.master_seed, &[tags::FIELD, r as u64]))
}

/// The channel field of realization `r`, as seen by every experiment.
pub fn realization_field(cfg: &ExperimentConfig, r: usize) -> Result<ChannelField> {
    let sampler = chanpred_core::FieldSampler::new(&cfg.field)?;
    Ok(field_for(&sampler, cfg, r))
}

/// Aggregate per-realization values into rows; failures become records.
pub(crate) fn aggregate(
    method: &str,
    sweep_name: &str,
    sweep_value: f64,
    metrics: &[&str],
    per_realization: &[Result<Vec<f64>, String>],
) -> ExperimentOutput {
    let mut out = ExperimentOutput::default();
    let ok: Vec<&Vec<f64>> = per_realization.iter().filter_map(|v| v.as_ref().ok()).collect();
    for (r, v) in per_realization.iter().enumerate() {
        if let Err(e) = v {
            out.failures.push(FailureRecord {
                method: method.into(),
                sweep_name: sweep_name.into(),
                sweep_value,
                realization: r,
                error: e.clone(),
            });
        }
    }
    if ok.is_empty() {
        return out;
    }
    for (k, metric) in metrics.iter().enumerate() {
        let vals: Vec<f64> = ok.iter().map(|v| v[k]).collect();
        out.rows.push(MetricRow {
            method: method.into(),
            sweep_name: sweep_name.into(),
            sweep_value,
            metric: (*metric).into(),
            mean: stats::mean(&vals),
            std: stats::sample_std(&vals),
            n: vals.len(),
        });
    }
    out
}

/// Look up the mean of one metric.
pub fn find_mean(rows: &[MetricRow], method: &str, sweep_name: &str, sweep_value: f64, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| {
            r.method == method && r.sweep_name == sweep_name && r.sweep_value == sweep_value && r.metric == metric
        })
        .map(|r| r.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            ExperimentConfig {
                lambda_sweep: vec![],
                ..Default::default()
            },
            ExperimentConfig {
                lambda_sweep: vec![2.0, 1.0],
                ..Default::default()
            },
            ExperimentConfig {
                n_realizations: 0,
                ..Default::default()
            },
            ExperimentConfig {
                n_train: 700,
                ..Default::default()
            },
            ExperimentConfig {
                methods: vec![],
                ..Default::default()
            },
            ExperimentConfig {
                prx_avg_budget: 10,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn aggregation_skips_failures() {
        let per = vec![Ok(vec![1.0, 10.0]), Err("boom".to_string()), Ok(vec![3.0, 30.0])];
        let out = aggregate("cGP", "lambda", 2.0, &["a", "b"], &per);
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].mean, 2.0);
        assert_eq!(out.rows[0].n, 2);
        assert_eq!(out.rows[1].mean, 20.0);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].realization, 1);
    }

    #[test]
    fn training_scales_with_lambda() {
        let cfg = ExperimentConfig::default();
        let sampler = chanpred_core::FieldSampler::new(&cfg.field).unwrap();
        let field = field_for(&sampler, &cfg, 0);
        let idx = training_indices(&cfg, &field, 0).unwrap();
        let a = simulate_training(&cfg, &field, 0, 2.0, &idx).unwrap();
        let b = simulate_training(&cfg, &field, 0, 4.0, &idx).unwrap();
        assert_eq!(a.data.y(), b.data.y());
        assert_eq!(a.hidden_truth, b.hidden_truth);
        for ((ua, ub), x) in a.data.inputs().iter().zip(b.data.inputs()).zip(&a.hidden_truth) {
            let ea = ua.mean() - x;
            let eb = ub.mean() - x;
            assert!((eb.x - 2.0 * ea.x).abs() < 1e-9 * (1.0 + eb.x.abs()));
        }
    }
}
