//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use chanpred_core::gp::ModelKind;
use chanpred_core::kernels::KernelExponent;
use chanpred_core::{point1, Dim, Point};
use chanpred_experiments::ExperimentConfig;

pub const KEYS: &[&str] = &[
    "dim",
    "extent_min",
    "extent_max",
    "resolution",
    "sigma_psi",
    "d_c",
    "l0",
    "eta",
    "sigma_n",
    "truth_kernel",
    "seed",
    "n_train",
    "n_test",
    "lambda_sweep",
    "sigma_sweep",
    "alpha_sweep",
    "resource_lambdas",
    "n_realizations",
    "mc_samples",
    "methods",
    "w_lin",
    "sigma_proc_offline",
    "calibration_realizations",
    "prx_avg_budget",
    "lambda",
    "workers",
];

/// Keys whose values determine the offline process-noise calibration.
const CALIBRATION_KEYS: &[&str] = &[
    "dim",
    "extent_min",
    "extent_max",
    "resolution",
    "sigma_psi",
    "d_c",
    "l0",
    "eta",
    "sigma_n",
    "truth_kernel",
    "seed",
    "n_train",
    "calibration_realizations",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Location error for a single `learn` run.
    pub lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            lambda: 0.0,
        }
    }
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            bail!("line {}: unknown key '{k}'", n + 1);
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key '{k}'", n + 1);
        }
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse '{v}': {e}"))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| num::<f64>(key, s.trim())).collect()
}

fn point(key: &str, v: &str, dim: Dim) -> Result<Point> {
    let xs = list(key, v)?;
    match (dim, xs.as_slice()) {
        (Dim::One, [x]) => Ok(point1(*x)),
        (Dim::Two, [x, y]) => Ok(Point::new(*x, *y)),
        _ => bail!("{key}: expected {} coordinate(s), got {}", dim.count(), xs.len()),
    }
}

pub fn parse_methods(v: &str) -> Result<Vec<ModelKind>> {
    v.split(',')
        .map(|s| s.parse::<ModelKind>().map_err(|e| anyhow!("methods: {e}")))
        .collect()
}

/// `auto` or a number.
fn optional(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        let e = &mut self.experiment;
        if let Some(v) = map.get("dim") {
            e.field.dim = match v.as_str() {
                "1" => Dim::One,
                "2" => Dim::Two,
                _ => bail!("dim: expected 1 or 2, got '{v}'"),
            };
            if !map.contains_key("extent_min") || !map.contains_key("extent_max") {
                let (lo, hi) = (e.field.extent_min, e.field.extent_max);
                e.field.extent_min = Point::new(lo.x, if e.field.dim == Dim::Two { lo.x } else { 0.0 });
                e.field.extent_max = Point::new(hi.x, if e.field.dim == Dim::Two { hi.x } else { 0.0 });
            }
        }
        let dim = e.field.dim;
        for (k, v) in map {
            let v = v.as_str();
            match k.as_str() {
                "dim" => {}
                "extent_min" => e.field.extent_min = point(k, v, dim)?,
                "extent_max" => e.field.extent_max = point(k, v, dim)?,
                "resolution" => e.field.resolution = num(k, v)?,
                "sigma_psi" => e.field.sigma_psi = num(k, v)?,
                "d_c" => e.field.d_c = num(k, v)?,
                "l0" => e.field.l0 = num(k, v)?,
                "eta" => e.field.eta = num(k, v)?,
                "sigma_n" => e.field.sigma_n = num(k, v)?,
                "truth_kernel" => {
                    e.field.truth_kernel =
                        KernelExponent::from_value(num(k, v)?).map_err(|err| anyhow!("truth_kernel: {err}"))?
                }
                "seed" => e.master_seed = num(k, v)?,
                "n_train" => e.n_train = num(k, v)?,
                "n_test" => e.n_test = num(k, v)?,
                "lambda_sweep" => e.lambda_sweep = list(k, v)?,
                "sigma_sweep" => e.sigma_sweep = list(k, v)?,
                "alpha_sweep" => e.alpha_sweep = list(k, v)?,
                "resource_lambdas" => e.resource_lambdas = list(k, v)?,
                "n_realizations" => e.n_realizations = num(k, v)?,
                "mc_samples" => e.mc_samples = num(k, v)?,
                "methods" => e.methods = parse_methods(v)?,
                "w_lin" => e.w_lin = optional(k, v)?,
                "sigma_proc_offline" => e.sigma_proc_offline = optional(k, v)?,
                "calibration_realizations" => e.calibration_realizations = num(k, v)?,
                "prx_avg_budget" => e.prx_avg_budget = num(k, v)?,
                "lambda" => self.lambda = num(k, v)?,
                "workers" => e.workers = num(k, v)?,
                other => bail!("unknown key '{other}'"),
            }
        }
        e.field.seed = e.master_seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate().context("invalid configuration")?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bail!("invalid configuration: lambda must be finite and >= 0");
        }
        Ok(())
    }

    /// The resolved configuration in the same `key=value` format.
    pub fn dump(&self) -> String {
        let mut s = self.experiment.dump();
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "workers={}", self.experiment.workers);
        s
    }

    /// Lines of [`dump`](Self::dump) that the offline calibration depends on.
    pub fn calibration_fingerprint(&self) -> String {
        self.dump()
            .lines()
            .filter(|l| l.split_once('=').is_some_and(|(k, _)| CALIBRATION_KEYS.contains(&k)))
            .map(|l| format!("{l}\n"))
            .collect()
    }
}
