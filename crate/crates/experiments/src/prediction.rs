use rand::Rng;
use rayon::prelude::*;

use chanpred_core::field::{choose_grid_indices, perturb_location, ChannelField};
use chanpred_core::gp::{
    predict_mcgp, CgpPredictor, LearnedModel, McgpPredictOptions, ModelKind, TrainingSet, UgpPredictor,
};
use chanpred_core::rng::stream;
use chanpred_core::{Error, FieldSampler, LocationDistribution};

use crate::learning::Learners;
use crate::{
    aggregate, field_for, simulate_training, tags, training_indices, ExperimentConfig, ExperimentOutput, Result, Sink,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrxAverage {
    pub mean: f64,
    pub std_err: f64,
}

/// Average true received power over `u_star`, by Monte Carlo with `budget`
/// accepted draws. Draws outside the field are redrawn.
pub fn compute_prx_avg<R: Rng + ?Sized>(
    field: &ChannelField,
    u_star: &LocationDistribution,
    budget: usize,
    rng: &mut R,
) -> Result<PrxAverage> {
    if u_star.is_exact() {
        return Ok(PrxAverage {
            mean: field.received_power_at(&u_star.mean())?,
            std_err: 0.0,
        });
    }
    if budget == 0 {
        return Err(Error::Config("budget must be positive".into()).into());
    }
    let mut values = Vec::with_capacity(budget);
    let mut rejected = 0usize;
    while values.len() < budget {
        let x = u_star.sample(rng);
        match field.received_power_at(&x) {
            Ok(p) => values.push(p),
            Err(_) => {
                rejected += 1;
                // more than half of all draws so far are outside the field
                if rejected > budget {
                    return Err(Error::Domain(format!(
                        "more than half of the draws around ({}, {}) fall outside the field",
                        u_star.mean().x,
                        u_star.mean().y
                    ))
                    .into());
                }
            }
        }
    }
    let mean = crate::stats::mean(&values);
    let std_err = crate::stats::sample_std(&values) / (values.len() as f64).sqrt();
    Ok(PrxAverage { mean, std_err })
}

fn mse(truth: &[f64], pred: &[f64]) -> f64 {
    truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / truth.len() as f64
}

/// Grid indices not used for training, restricted to `keep`.
fn test_indices(
    cfg: &ExperimentConfig,
    field: &ChannelField,
    train: &[usize],
    r: usize,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<usize>> {
    let mut used = vec![false; field.len()];
    for &i in train {
        used[i] = true;
    }
    let pool: Vec<usize> = (0..field.len()).filter(|&i| !used[i] && keep(i)).collect();
    let pick = choose_grid_indices(
        pool.len(),
        cfg.n_test,
        &mut stream(cfg.master_seed, &[tags::TEST_LOCATIONS, r as u64]),
    )?;
    Ok(pick.into_iter().map(|k| pool[k]).collect())
}

/// Predictions of one method at test distributions.
fn predict_many(
    method: ModelKind,
    model: &LearnedModel,
    data: &TrainingSet,
    tests: &[LocationDistribution],
    mc_samples: usize,
    seed: (u64, &[u64]),
) -> Result<Vec<f64>> {
    let mut rng = stream(seed.0, seed.1);
    let mc = McgpPredictOptions {
        samples: mc_samples,
        ..Default::default()
    };
    let out: Vec<f64> = match method {
        ModelKind::Cgp | ModelKind::CgpNoProc => {
            let p = CgpPredictor::new(model, data)?;
            tests
                .iter()
                .map(|u| p.predict(&u.mean()).map(|q| q.mean))
                .collect::<Result<_, _>>()?
        }
        ModelKind::Ugp | ModelKind::UgpProc => {
            let p = UgpPredictor::new(model, data)?;
            tests
                .iter()
                .map(|u| p.predict(u).map(|q| q.mean))
                .collect::<Result<_, _>>()?
        }
        ModelKind::Mcgp | ModelKind::Gagp => {
            if data.all_exact() {
                let p = CgpPredictor::new(model, data)?;
                tests
                    .iter()
                    .map(|u| p.predict_marginal(u, mc_samples, &mut rng).map(|q| q.mean))
                    .collect::<Result<_, _>>()?
            } else {
                tests
                    .iter()
                    .map(|u| predict_mcgp(model, data, u, &mc, &mut rng).map(|q| q.mean))
                    .collect::<Result<_, _>>()?
            }
        }
    };
    Ok(out)
}

/// MSE at exact test locations versus the training uncertainty `lambda`.
pub fn run_prediction_uncertain_training(cfg: &ExperimentConfig, sink: Option<Sink<'_>>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let needs_proc = cfg.methods.iter().any(|m| m.uses_expected_kernel());
    let learners = Learners::new(cfg, if needs_proc { cfg.resolve_sigma_proc()? } else { 0.0 });
    let sampler = FieldSampler::new(&cfg.field)?;
    let pool = cfg.pool()?;
    let mut sink = sink;
    let mut out = ExperimentOutput::default();

    for (li, &lambda) in cfg.lambda_sweep.iter().enumerate() {
        let per_realization: Vec<Vec<Result<Vec<f64>, String>>> = pool.install(|| {
            (0..cfg.n_realizations)
                .into_par_iter()
                .map(|r| {
                    let setup = (|| {
                        let field = field_for(&sampler, cfg, r);
                        let train = training_indices(cfg, &field, r)?;
                        let test = test_indices(cfg, &field, &train, r, |_| true)?;
                        let sim = simulate_training(cfg, &field, r, lambda, &train)?;
                        Ok::<_, crate::ExperimentError>((field, test, sim))
                    })();
                    let (field, test, sim) = match setup {
                        Ok(v) => v,
                        Err(e) => return vec![Err(e.to_string()); cfg.methods.len()],
                    };
                    let truth: Vec<f64> = test.iter().map(|&i| field.power()[i]).collect();
                    let tests: Vec<LocationDistribution> = test
                        .iter()
                        .map(|&i| LocationDistribution::exact(field.grid()[i], cfg.field.dim))
                        .collect();
                    let learn_tags = [tags::MCGP, li as u64, r as u64];
                    let models = learners.learn_all(&cfg.methods, &sim.data, (cfg.master_seed, &learn_tags));
                    cfg.methods
                        .iter()
                        .zip(models)
                        .enumerate()
                        .map(|(k, (&method, model))| {
                            let model = model?;
                            let t = [tags::PREDICT, li as u64, r as u64, k as u64];
                            let pred =
                                predict_many(method, &model, &sim.data, &tests, cfg.mc_samples, (cfg.master_seed, &t))
                                    .map_err(|e| e.to_string())?;
                            Ok(vec![mse(&truth, &pred)])
                        })
                        .collect()
                })
                .collect()
        });
        let mut cell = ExperimentOutput::default();
        for (k, method) in cfg.methods.iter().enumerate() {
            let column: Vec<_> = per_realization.iter().map(|v| v[k].clone()).collect();
            let agg = aggregate(method.name(), "lambda", lambda, &["mse"], &column);
            cell.rows.extend(agg.rows);
            cell.failures.extend(agg.failures);
        }
        log::info!("uncertain-training prediction: lambda = {lambda} done");
        if let Some(s) = sink.as_mut() {
            s(&cell.rows, &cell.failures);
        }
        out.rows.extend(cell.rows);
        out.failures.extend(cell.failures);
    }
    Ok(out)
}

struct ExactTrainingRealization {
    field: ChannelField,
    data: TrainingSet,
    test: Vec<usize>,
    models: Vec<Result<LearnedModel, String>>,
}

/// MSE against the location-averaged received power versus the test
/// uncertainty `sigma`, with exact training locations.
pub fn run_prediction_uncertain_test(cfg: &ExperimentConfig, sink: Option<Sink<'_>>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let needs_proc = cfg.methods.iter().any(|m| m.uses_expected_kernel());
    let learners = Learners::new(cfg, if needs_proc { cfg.resolve_sigma_proc()? } else { 0.0 });
    let sampler = FieldSampler::new(&cfg.field)?;
    let pool = cfg.pool()?;
    let geometry = cfg.field.geometry();
    let margin = 3.0 * cfg.sigma_sweep.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = (geometry.min, geometry.max());
    let interior = |i: usize| {
        let x = geometry.point(i);
        (0..cfg.field.dim.count()).all(|k| x[k] >= lo[k] + margin && x[k] <= hi[k] - margin)
    };

    // Training is exact, so the models do not depend on sigma.
    let realizations: Vec<Result<ExactTrainingRealization, String>> = pool.install(|| {
        (0..cfg.n_realizations)
            .into_par_iter()
            .map(|r| {
                let field = field_for(&sampler, cfg, r);
                let train = training_indices(cfg, &field, r).map_err(|e| e.to_string())?;
                let test = test_indices(cfg, &field, &train, r, interior).map_err(|e| e.to_string())?;
                let sim = simulate_training(cfg, &field, r, 0.0, &train).map_err(|e| e.to_string())?;
                let learn_tags = [tags::MCGP, 0, r as u64];
                let models = learners.learn_all(&cfg.methods, &sim.data, (cfg.master_seed, &learn_tags));
                Ok(ExactTrainingRealization {
                    field,
                    data: sim.data,
                    test,
                    models,
                })
            })
            .collect()
    });

    let mut sink = sink;
    let mut out = ExperimentOutput::default();
    for (si, &sigma) in cfg.sigma_sweep.iter().enumerate() {
        let per_realization: Vec<Vec<Result<Vec<f64>, String>>> = pool.install(|| {
            realizations
                .par_iter()
                .enumerate()
                .map(|(r, real)| {
                    let real = match real {
                        Ok(v) => v,
                        Err(e) => return vec![Err(e.clone()); cfg.methods.len()],
                    };
                    let targets = (|| {
                        let mut perturb = stream(cfg.master_seed, &[tags::TEST_PERTURB, r as u64]);
                        let mut avg = stream(cfg.master_seed, &[tags::TARGET, si as u64, r as u64]);
                        let mut tests = Vec::with_capacity(real.test.len());
                        let mut truth = Vec::with_capacity(real.test.len());
                        for &i in &real.test {
                            let u = perturb_location(&real.field.grid()[i], sigma, cfg.field.dim, &mut perturb)?;
                            truth.push(compute_prx_avg(&real.field, &u, cfg.prx_avg_budget, &mut avg)?.mean);
                            tests.push(u);
                        }
                        Ok::<_, crate::ExperimentError>((tests, truth))
                    })();
                    let (tests, truth) = match targets {
                        Ok(v) => v,
                        Err(e) => return vec![Err(e.to_string()); cfg.methods.len()],
                    };
                    cfg.methods
                        .iter()
                        .zip(&real.models)
                        .enumerate()
                        .map(|(k, (&method, model))| {
                            let model = model.as_ref().map_err(|e| e.clone())?;
                            let t = [tags::PREDICT, si as u64, r as u64, k as u64];
                            let pred =
                                predict_many(method, model, &real.data, &tests, cfg.mc_samples, (cfg.master_seed, &t))
                                    .map_err(|e| e.to_string())?;
                            Ok(vec![mse(&truth, &pred)])
                        })
                        .collect()
                })
                .collect()
        });
        let mut cell = ExperimentOutput::default();
        for (k, method) in cfg.methods.iter().enumerate() {
            let column: Vec<_> = per_realization.iter().map(|v| v[k].clone()).collect();
            let agg = aggregate(method.name(), "sigma", sigma, &["mse"], &column);
            cell.rows.extend(agg.rows);
            cell.failures.extend(agg.failures);
        }
        log::info!("uncertain-test prediction: sigma = {sigma} done");
        if let Some(s) = sink.as_mut() {
            s(&cell.rows, &cell.failures);
        }
        out.rows.extend(cell.rows);
        out.failures.extend(cell.failures);
    }
    Ok(out)
}
