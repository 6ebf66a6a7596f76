use rayon::prelude::*;

use chanpred_core::field::{path_loss_mean, ChannelField, FieldConfig};
use chanpred_core::gp::{CgpPredictor, ModelKind, UgpPredictor};
use chanpred_core::rng::stream;
use chanpred_core::{FieldSampler, LocationDistribution};

use crate::learning::Learners;
use crate::{
    aggregate, field_for, simulate_training, tags, training_indices, ExperimentConfig, ExperimentOutput, Result, Sink,
};

/// `log2(1 + SNR)` in bits per channel use for power `p_dbm` over a noise
/// floor `w_dbm`. Never negative.
pub fn rate_bits(p_dbm: f64, w_dbm: f64) -> f64 {
    let snr = 10f64.powf((p_dbm - w_dbm) / 10.0);
    if snr.is_finite() {
        snr.ln_1p() / std::f64::consts::LN_2
    } else if snr > 0.0 {
        (p_dbm - w_dbm) / 10.0 * std::f64::consts::LOG2_10
    } else {
        0.0
    }
}

/// Noise floor in dBm that puts the median deterministic SNR over the grid
/// at 10 dB.
pub fn auto_noise_floor_dbm(field: &FieldConfig) -> f64 {
    let g = field.geometry();
    let mut pl: Vec<f64> = (0..g.len())
        .map(|i| path_loss_mean(&g.point(i), field.l0, field.eta))
        .collect();
    pl.sort_by(f64::total_cmp);
    let n = pl.len();
    let median = if n % 2 == 1 {
        pl[n / 2]
    } else {
        0.5 * (pl[n / 2 - 1] + pl[n / 2])
    };
    median - 10.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Spatial average of the delivered rate `min(r_alpha, r_true)`.
    pub r_eff: f64,
    /// Fraction of allocated bits that the true channel cannot carry.
    pub undelivered: f64,
}

/// Rate allocation from predicted mean and variance backed off by `alpha`
/// standard deviations.
pub fn allocation_metrics(mean: &[f64], variance: &[f64], truth: &[f64], alpha: f64, w_dbm: f64) -> Allocation {
    let mut allocated = 0.0;
    let mut delivered = 0.0;
    for ((m, v), t) in mean.iter().zip(variance).zip(truth) {
        let r = rate_bits(m - alpha * v.max(0.0).sqrt(), w_dbm);
        let r_true = rate_bits(*t, w_dbm);
        allocated += r;
        delivered += r.min(r_true);
    }
    let n = truth.len() as f64;
    let undelivered = if allocated > 0.0 {
        (allocated - delivered) / allocated
    } else {
        0.0
    };
    Allocation {
        r_eff: delivered / n,
        undelivered,
    }
}

fn w_dbm(cfg: &ExperimentConfig) -> f64 {
    match cfg.w_lin {
        Some(w) => 10.0 * w.log10(),
        None => auto_noise_floor_dbm(&cfg.field),
    }
}

fn predictions(
    method: ModelKind,
    model: &chanpred_core::gp::LearnedModel,
    data: &chanpred_core::gp::TrainingSet,
    field: &ChannelField,
    dim: chanpred_core::Dim,
    mc_samples: usize,
    seed: (u64, &[u64]),
) -> chanpred_core::Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = Vec::with_capacity(field.len());
    let mut var = Vec::with_capacity(field.len());
    let mut rng = stream(seed.0, seed.1);
    let mc = chanpred_core::gp::McgpPredictOptions {
        samples: mc_samples,
        ..Default::default()
    };
    enum P {
        C(CgpPredictor),
        U(UgpPredictor),
        M,
    }
    let p = match method {
        ModelKind::Cgp | ModelKind::CgpNoProc => P::C(CgpPredictor::new(model, data)?),
        ModelKind::Ugp | ModelKind::UgpProc => P::U(UgpPredictor::new(model, data)?),
        ModelKind::Mcgp | ModelKind::Gagp => P::M,
    };
    for x in field.grid() {
        let u = LocationDistribution::exact(*x, dim);
        let post = match &p {
            P::C(c) => c.predict(x)?,
            P::U(q) => q.predict(&u)?,
            P::M => chanpred_core::gp::predict_mcgp(model, data, &u, &mc, &mut rng)?,
        };
        mean.push(post.mean);
        var.push(post.variance);
    }
    Ok((mean, var))
}

/// Delivered rate and undelivered fraction versus the confidence parameter
/// `alpha`, for each training uncertainty in `resource_lambdas`. The test
/// trajectory is the whole grid at exact locations.
pub fn run_resource_allocation(cfg: &ExperimentConfig, sink: Option<Sink<'_>>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let needs_proc = cfg.methods.iter().any(|m| m.uses_expected_kernel());
    let learners = Learners::new(cfg, if needs_proc { cfg.resolve_sigma_proc()? } else { 0.0 });
    let sampler = FieldSampler::new(&cfg.field)?;
    let pool = cfg.pool()?;
    let w = w_dbm(cfg);
    let n_alpha = cfg.alpha_sweep.len();
    let mut sink = sink;
    let mut out = ExperimentOutput::default();

    for (li, &lambda) in cfg.resource_lambdas.iter().enumerate() {
        // per realization: reference rate, then per method a vector of
        // (r_eff, U) pairs over alpha
        type PerMethod = Vec<Result<Vec<f64>, String>>;
        let per_realization: Vec<(Result<f64, String>, PerMethod)> = pool.install(|| {
            (0..cfg.n_realizations)
                .into_par_iter()
                .map(|r| {
                    let field = field_for(&sampler, cfg, r);
                    let sim = training_indices(cfg, &field, r)
                        .and_then(|idx| simulate_training(cfg, &field, r, lambda, &idx));
                    let sim = match sim {
                        Ok(s) => s,
                        Err(e) => {
                            let msg = e.to_string();
                            return (Err(msg.clone()), vec![Err(msg); cfg.methods.len()]);
                        }
                    };
                    let truth = field.power();
                    let r_ref = truth.iter().map(|p| rate_bits(*p, w)).sum::<f64>() / truth.len() as f64;
                    let learn_tags = [tags::MCGP, 100 + li as u64, r as u64];
                    let models = learners.learn_all(&cfg.methods, &sim.data, (cfg.master_seed, &learn_tags));
                    let per_method = cfg
                        .methods
                        .iter()
                        .zip(models)
                        .enumerate()
                        .map(|(k, (&method, model))| {
                            let model = model?;
                            let t = [tags::PREDICT, 100 + li as u64, r as u64, k as u64];
                            let (mean, var) = predictions(
                                method,
                                &model,
                                &sim.data,
                                &field,
                                cfg.field.dim,
                                cfg.mc_samples,
                                (cfg.master_seed, &t),
                            )
                            .map_err(|e| e.to_string())?;
                            let mut v = Vec::with_capacity(2 * n_alpha);
                            for &alpha in &cfg.alpha_sweep {
                                let a = allocation_metrics(&mean, &var, truth, alpha, w);
                                v.push(a.r_eff);
                                v.push(a.undelivered);
                            }
                            Ok(v)
                        })
                        .collect();
                    (Ok(r_ref), per_method)
                })
                .collect()
        });

        let sweep_name = format!("alpha(lambda={lambda})");
        let mut cell = ExperimentOutput::default();
        for (ai, &alpha) in cfg.alpha_sweep.iter().enumerate() {
            let refs: Vec<Result<Vec<f64>, String>> = per_realization
                .iter()
                .map(|(r, _)| r.clone().map(|v| vec![v]))
                .collect();
            let agg = aggregate("reference", &sweep_name, alpha, &["r_eff"], &refs);
            cell.rows.extend(agg.rows);
            if ai == 0 {
                cell.failures.extend(agg.failures);
            }
            for (k, method) in cfg.methods.iter().enumerate() {
                let column: Vec<Result<Vec<f64>, String>> = per_realization
                    .iter()
                    .map(|(_, m)| m[k].clone().map(|v| vec![v[2 * ai], v[2 * ai + 1]]))
                    .collect();
                let agg = aggregate(
                    method.name(),
                    &sweep_name,
                    alpha,
                    &["r_eff", "undelivered_frac"],
                    &column,
                );
                cell.rows.extend(agg.rows);
                if ai == 0 {
                    cell.failures.extend(agg.failures);
                }
            }
        }
        log::info!("resource allocation: lambda = {lambda} done");
        if let Some(s) = sink.as_mut() {
            s(&cell.rows, &cell.failures);
        }
        out.rows.extend(cell.rows);
        out.failures.extend(cell.failures);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_is_never_negative() {
        assert_eq!(rate_bits(-4000.0, -80.0), 0.0);
        assert!(rate_bits(-1000.0, -80.0) >= 0.0);
        assert!((rate_bits(-80.0, -80.0) - 1.0).abs() < 1e-12);
        assert!(rate_bits(f64::NEG_INFINITY, -80.0) == 0.0);
        assert!(rate_bits(5000.0, -80.0).is_finite());
    }

    #[test]
    fn oracle_predictor_delivers_everything() {
        let truth = vec![-60.0, -70.0, -80.0, -55.0];
        let zero = vec![0.0; 4];
        for alpha in [0.0, 1.0, 3.0] {
            let a = allocation_metrics(&truth, &zero, &truth, alpha, -85.0);
            let r_ref = truth.iter().map(|p| rate_bits(*p, -85.0)).sum::<f64>() / 4.0;
            assert_eq!(a.undelivered, 0.0);
            assert!((a.r_eff - r_ref).abs() < 1e-12);
        }
    }

    #[test]
    fn backing_off_reduces_rate_and_losses() {
        let truth = vec![-60.0, -70.0, -80.0, -55.0];
        let mean = vec![-57.0, -72.0, -76.0, -56.0];
        let var = vec![4.0, 9.0, 1.0, 16.0];
        let mut last = allocation_metrics(&mean, &var, &truth, 0.0, -85.0);
        for k in 1..=12 {
            let a = allocation_metrics(&mean, &var, &truth, 0.25 * k as f64, -85.0);
            assert!(a.r_eff <= last.r_eff + 1e-15);
            assert!(a.undelivered <= last.undelivered + 1e-15);
            last = a;
        }
        assert!(last.undelivered < 1.0 && last.undelivered >= 0.0);
    }

    #[test]
    fn noise_floor_puts_median_snr_at_10_db() {
        let cfg = FieldConfig::default();
        let w = auto_noise_floor_dbm(&cfg);
        // median of the path-loss over a uniform grid on [20, 200]
        let median = -10.0 - 25.0 * 110f64.log10();
        assert!((w - (median - 10.0)).abs() < 1e-9);
    }
}
