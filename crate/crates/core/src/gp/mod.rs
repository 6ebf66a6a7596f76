//! Hyperparameter learning and posterior prediction.

mod calibrate;
mod learn;
mod mcgp;
mod predict;

pub use calibrate::{calibrate_sigma_proc_offline, CalibrationOptions};
pub use learn::{
    estimate_eta_ls, learn_cgp, learn_classical, learn_gagp, learn_ugp, log_spaced, nll, LearnOptions, Regressor,
};
pub use mcgp::{learn_mcgp, mcgp_objective, McgpOptions, McgpSamples};
pub use predict::{predict_cgp, predict_mcgp, predict_ugp, CgpPredictor, McgpPredictOptions, UgpPredictor};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{LocationDistribution, Point};
use crate::kernels::Hyperparameters;
use crate::simplex::SimplexResult;

/// Observations paired with the location distributions they were reported at.
/// This is all a learner or predictor gets to see.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    inputs: Vec<LocationDistribution>,
    y: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<LocationDistribution>, y: Vec<f64>) -> Result<Self> {
        if inputs.len() != y.len() {
            return Err(Error::Config(format!(
                "{} inputs but {} observations",
                inputs.len(),
                y.len()
            )));
        }
        if inputs.len() < 2 {
            return Err(Error::Config("at least two observations are required".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("observations must be finite".into()));
        }
        if inputs.windows(2).any(|w| w[0].dim() != w[1].dim()) {
            return Err(Error::Config("inputs must share one dimension".into()));
        }
        Ok(Self { inputs, y })
    }

    pub fn inputs(&self) -> &[LocationDistribution] {
        &self.inputs
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Reported mean locations `z_i`.
    pub fn means(&self) -> Vec<Point> {
        self.inputs.iter().map(|u| u.mean()).collect()
    }

    pub fn all_exact(&self) -> bool {
        self.inputs.iter().all(|u| u.is_exact())
    }

    /// Same observations with every covariance dropped.
    pub fn at_means(&self) -> Self {
        let inputs = self
            .inputs
            .iter()
            .map(|u| LocationDistribution::exact(u.mean(), u.dim()))
            .collect();
        Self {
            inputs,
            y: self.y.clone(),
        }
    }
}

/// A training set produced by simulation, together with the true locations.
/// Only oracles and metrics read `hidden_truth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTraining {
    pub data: TrainingSet,
    pub hidden_truth: Vec<Point>,
}

/// Parameters the nodes know and never estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownParams {
    pub l0: f64,
    pub sigma_n: f64,
}

impl Default for KnownParams {
    fn default() -> Self {
        Self {
            l0: -10.0,
            sigma_n: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Cgp,
    CgpNoProc,
    Ugp,
    UgpProc,
    Mcgp,
    Gagp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Cgp,
        ModelKind::CgpNoProc,
        ModelKind::Ugp,
        ModelKind::UgpProc,
        ModelKind::Mcgp,
        ModelKind::Gagp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cgp => "cGP",
            Self::CgpNoProc => "cGP-no-proc",
            Self::Ugp => "uGP",
            Self::UgpProc => "uGP-proc",
            Self::Mcgp => "MCGP",
            Self::Gagp => "GAGP",
        }
    }

    /// Whether the model is defined on location distributions rather than points.
    pub fn uses_expected_kernel(self) -> bool {
        matches!(self, Self::Ugp | Self::UgpProc | Self::Gagp)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    /// Clamp tiny negative variances caused by round-off; larger ones are
    /// a numerical failure.
    pub(crate) fn checked(mean: f64, variance: f64, prior: f64) -> Result<Self> {
        if variance >= 0.0 {
            return Ok(Self { mean, variance });
        }
        if -variance < 1e-8 * prior.max(f64::MIN_POSITIVE) {
            log::warn!("clamping posterior variance {variance:e} to 0");
            return Ok(Self { mean, variance: 0.0 });
        }
        Err(Error::NegativeVariance { variance, prior })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostics {
    /// NLL surface; rows follow `d_c`, columns the second grid axis.
    Grid {
        d_c: Vec<f64>,
        second: Vec<f64>,
        nll: DMatrix<f64>,
    },
    Simplex(SimplexResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    pub theta: Hyperparameters,
    pub kind: ModelKind,
    /// Observations with the fitted path-loss mean removed.
    pub residuals: Vec<f64>,
    pub sigma_tot: f64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl LearnedModel {
    pub const CSV_HEADER: &'static str = "kind,eta_hat,d_c_hat,sigma_psi_hat,sigma_proc_hat,sigma_tot,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kind,
            self.theta.eta,
            self.theta.d_c,
            self.theta.sigma_psi,
            self.theta.sigma_proc,
            self.sigma_tot,
            self.converged
        )
    }
}
