//! The separable spatio-temporal Gaussian model: penalised-complexity
//! priors, empirical-Bayes MAP hyperparameter estimation with the latent
//! block integrated in closed form, kriging prediction, holdout validation,
//! trend regressions and model-structure comparison.

mod fit;
mod likelihood;
mod predict;
mod priors;
mod regression;
pub mod sim;
mod trend;
mod validate;

pub use fit::{
    compare_structures, fit_map, model_at, FitConfig, StructureFit, StructureScore, StructureSpec,
};
pub use likelihood::{marginal_loglik_at, Hyper};
pub use predict::{predict, predict_at, predict_surfaces, PredictionSurface};
pub use priors::{pc_prior_logdensity_matern, rw_penalty, rw_sd_log_prior, PcPriorSpec};
pub use regression::{fit_trend_regression, TrendRegression};
pub use trend::TrendKind;
pub use validate::{validate_holdout, HoldoutReport, HoldoutRow};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::MaternParams;
use crate::error::{Error, Result};
use crate::ingest::Observation;

/// A fitted space-time model: MAP hyperparameters, latent posterior means
/// and the factorized covariance needed for prediction.
///
/// Estimation is MAP / empirical Bayes: the reported uncertainty is the
/// Gaussian conditional given the fitted hyperparameters, not a full
/// posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub trend_kind: TrendKind,
    pub ar1: bool,
    pub kappa: f64,
    /// Intercept posterior mean.
    pub beta0: f64,
    /// Named coefficients for any non-intercept fixed effects (fixed time
    /// trends, retention dummies).
    pub fixed_effects: Vec<(String, f64)>,
    /// Modeled years (contiguous span of the training data).
    pub years: Vec<i32>,
    /// Posterior mean of the yearly random-walk effect, one entry per
    /// modeled year; empty for fixed trends.
    pub trend: Vec<f64>,
    pub a: f64,
    pub sigma_w: f64,
    pub tau_eps: f64,
    pub tau_rw: Option<f64>,
    /// Spatial parameters; `sigma` is the marginal SD of the stationary
    /// field and `nugget_var = 1 / tau_eps`.
    pub spatial: MaternParams,
    pub priors: PcPriorSpec,
    /// Maximized marginal log-likelihood (latent block integrated).
    pub loglik: f64,
    /// `loglik` plus the PC-prior log-densities at the optimum.
    pub objective: f64,
    pub n_obs: usize,
    /// Centering constant used for fixed time-trend columns.
    pub year_center: f64,
    /// Digest of the training observations; prediction refuses data that
    /// does not match.
    pub data_digest: u64,
    #[serde(skip)]
    pub(crate) state: Option<PredictState>,
}

impl FittedModel {
    /// Marginal variance of the stationary space-time field.
    pub fn marginal_var(&self) -> f64 {
        self.sigma_w * self.sigma_w / (1.0 - self.a * self.a)
    }

    pub fn year_span(&self) -> (i32, i32) {
        (self.years[0], *self.years.last().unwrap())
    }

    /// Serialize to JSON (hyperparameters and latent means; the
    /// factorization is rebuilt on load).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(doc: &str) -> Result<FittedModel> {
        Ok(serde_json::from_str(doc)?)
    }

    /// Rebuild the prediction state from the training observations.
    /// The observations must be the ones the model was fitted on.
    pub fn attach_data(
        &mut self,
        obs: &[Observation],
        timelines: Option<&[crate::ingest::SiteTimeline]>,
    ) -> Result<()> {
        let digest = observation_digest(obs);
        if digest != self.data_digest {
            return Err(Error::DataMismatch(format!(
                "observation digest {digest:#x} does not match the fitted model ({:#x})",
                self.data_digest
            )));
        }
        let retention = if self.fixed_effects.iter().any(|(n, _)| n.starts_with("retention")) {
            timelines
        } else {
            None
        };
        self.state = Some(fit::build_predict_state(self, obs, retention)?);
        Ok(())
    }

    pub(crate) fn state(&self) -> Result<&PredictState> {
        self.state.as_ref().ok_or_else(|| {
            Error::DataMismatch("model has no attached data; call attach_data first".into())
        })
    }
}

/// Dense factorization and GLS quantities reused across predictions.
#[derive(Debug, Clone)]
pub(crate) struct PredictState {
    pub sites: Vec<crate::geo::PointKm>,
    pub obs_site: Vec<usize>,
    pub obs_year: Vec<usize>,
    pub x: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Sigma^{-1} (z - X beta)
    pub alpha: DVector<f64>,
    /// Sigma^{-1} X
    pub w: DMatrix<f64>,
    /// (X' Sigma^{-1} X)^{-1}
    pub m_inv: DMatrix<f64>,
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Covariance of the yearly trend effect (`Q^+ / tau_rw`), if the model
    /// has a random-walk trend.
    pub trend_cov: Option<DMatrix<f64>>,
}

/// Order-insensitive digest of the observations used to fit a model.
pub fn observation_digest(obs: &[Observation]) -> u64 {
    let mut keys: Vec<String> = obs
        .iter()
        .map(|o| {
            format!(
                "{}|{}|{:.10}|{:.6}|{:.6}",
                o.site_id, o.year, o.z, o.location.x, o.location.y
            )
        })
        .collect();
    keys.sort();
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for k in keys {
        for b in k.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1e;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
