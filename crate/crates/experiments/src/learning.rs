use rayon::prelude::*;

use chanpred_core::gp::{
    learn_cgp, learn_gagp, learn_mcgp, learn_ugp, KnownParams, LearnOptions, LearnedModel, McgpOptions, ModelKind,
    TrainingSet,
};
use chanpred_core::rng::stream;
use chanpred_core::FieldSampler;

use crate::{
    aggregate, field_for, simulate_training, tags, training_indices, ExperimentConfig, ExperimentOutput, Result, Sink,
};

const METRICS: [&str; 4] = ["d_c_hat", "sigma_psi_hat", "sigma_proc_hat", "eta_hat"];

pub(crate) struct Learners {
    pub known: KnownParams,
    pub opts: LearnOptions,
    pub sigma_proc: f64,
    pub mcgp: McgpOptions,
}

impl Learners {
    pub fn new(cfg: &ExperimentConfig, sigma_proc: f64) -> Self {
        Self {
            known: KnownParams {
                l0: cfg.field.l0,
                sigma_n: cfg.field.sigma_n,
            },
            opts: LearnOptions::default(),
            sigma_proc,
            mcgp: McgpOptions {
                samples: cfg.mc_samples,
                ..Default::default()
            },
        }
    }

    /// Learn every requested method on one data set. MCGP starts from the
    /// cGP estimate of the same data.
    pub fn learn_all(
        &self,
        methods: &[ModelKind],
        data: &TrainingSet,
        mcgp_seed: (u64, &[u64]),
    ) -> Vec<Result<LearnedModel, String>> {
        let mut cgp: Option<Result<LearnedModel, String>> = None;
        let mut cgp_once = |me: &Self| -> Result<LearnedModel, String> {
            cgp.get_or_insert_with(|| learn_cgp(data, &me.known, true, &me.opts).map_err(|e| e.to_string()))
                .clone()
        };
        methods
            .iter()
            .map(|m| match m {
                ModelKind::Cgp => cgp_once(self),
                ModelKind::CgpNoProc => learn_cgp(data, &self.known, false, &self.opts).map_err(|e| e.to_string()),
                ModelKind::Ugp => {
                    learn_ugp(data, &self.known, self.sigma_proc, false, &self.opts).map_err(|e| e.to_string())
                }
                ModelKind::UgpProc => {
                    learn_ugp(data, &self.known, self.sigma_proc, true, &self.opts).map_err(|e| e.to_string())
                }
                ModelKind::Gagp => {
                    learn_gagp(data, &self.known, self.sigma_proc, &self.opts).map_err(|e| e.to_string())
                }
                ModelKind::Mcgp => {
                    let init = cgp_once(self)?;
                    let mut rng = stream(mcgp_seed.0, mcgp_seed.1);
                    learn_mcgp(data, &self.known, &init.theta, &self.mcgp, &mut rng).map_err(|e| e.to_string())
                }
            })
            .collect()
    }
}

/// Hyperparameter estimates versus the mean location-error std `lambda`.
pub fn run_learning_sweep(cfg: &ExperimentConfig, sink: Option<Sink<'_>>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let needs_proc = cfg.methods.iter().any(|m| m.uses_expected_kernel());
    let sigma_proc = if needs_proc { cfg.resolve_sigma_proc()? } else { 0.0 };
    let learners = Learners::new(cfg, sigma_proc);
    let sampler = FieldSampler::new(&cfg.field)?;
    let pool = cfg.pool()?;
    let mut sink = sink;
    let mut out = ExperimentOutput::default();

    for (li, &lambda) in cfg.lambda_sweep.iter().enumerate() {
        let per_realization: Vec<Vec<Result<Vec<f64>, String>>> = pool.install(|| {
            (0..cfg.n_realizations)
                .into_par_iter()
                .map(|r| {
                    let data = (|| {
                        let field = field_for(&sampler, cfg, r);
                        let idx = training_indices(cfg, &field, r)?;
                        simulate_training(cfg, &field, r, lambda, &idx)
                    })();
                    match data {
                        Err(e) => vec![Err(e.to_string()); cfg.methods.len()],
                        Ok(sim) => {
                            let tags = [tags::MCGP, li as u64, r as u64];
                            learners
                                .learn_all(&cfg.methods, &sim.data, (cfg.master_seed, &tags))
                                .into_iter()
                                .map(|m| {
                                    m.map(|m| vec![m.theta.d_c, m.theta.sigma_psi, m.theta.sigma_proc, m.theta.eta])
                                })
                                .collect()
                        }
                    }
                })
                .collect()
        });

        let mut cell = ExperimentOutput::default();
        for (k, method) in cfg.methods.iter().enumerate() {
            let column: Vec<Result<Vec<f64>, String>> = per_realization.iter().map(|v| v[k].clone()).collect();
            let agg = aggregate(method.name(), "lambda", lambda, &METRICS, &column);
            cell.rows.extend(agg.rows);
            cell.failures.extend(agg.failures);
        }
        log::info!(
            "learning sweep: lambda = {lambda} done ({} failures)",
            cell.failures.len()
        );
        if let Some(s) = sink.as_mut() {
            s(&cell.rows, &cell.failures);
        }
        out.rows.extend(cell.rows);
        out.failures.extend(cell.failures);
    }
    Ok(out)
}

/// Learn `cfg.methods` on the training data of one realization at location
/// error `lambda`.
pub fn learn_realization(
    cfg: &ExperimentConfig,
    lambda: f64,
    realization: usize,
) -> Result<Vec<(ModelKind, Result<LearnedModel, String>)>> {
    cfg.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(crate::ExperimentError::Config("lambda must be finite and >= 0".into()));
    }
    let needs_proc = cfg.methods.iter().any(|m| m.uses_expected_kernel());
    let sigma_proc = if needs_proc { cfg.resolve_sigma_proc()? } else { 0.0 };
    let learners = Learners::new(cfg, sigma_proc);
    let sampler = FieldSampler::new(&cfg.field)?;
    let field = field_for(&sampler, cfg, realization);
    let idx = training_indices(cfg, &field, realization)?;
    let sim = simulate_training(cfg, &field, realization, lambda, &idx)?;
    let tags = [tags::MCGP, lambda.to_bits(), realization as u64];
    let models = learners.learn_all(&cfg.methods, &sim.data, (cfg.master_seed, &tags));
    Ok(cfg.methods.iter().copied().zip(models).collect())
}
