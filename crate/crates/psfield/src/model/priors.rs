//! Penalised-complexity priors for the spatial field and the random-walk
//! trend precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User-facing prior specification.
///
/// The Matérn prior states `P(range < range_lower_km) = range_prob` and
/// `P(sigma > sigma_upper) = sigma_prob` for the marginal SD of the
/// stationary field. The random-walk prior is an exponential on the
/// increment SD `tau_rw^{-1/2}` with `P(sd > rw_sd_upper) = rw_sd_prob`;
/// when `rw_sd_upper` is `None` the empirical SD of the data is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPriorSpec {
    pub range_lower_km: f64,
    pub range_prob: f64,
    pub sigma_upper: f64,
    pub sigma_prob: f64,
    pub rw_sd_upper: Option<f64>,
    pub rw_sd_prob: f64,
}

impl Default for PcPriorSpec {
    fn default() -> Self {
        Self {
            range_lower_km: 6.0,
            range_prob: 0.01,
            sigma_upper: 35.0,
            sigma_prob: 0.01,
            rw_sd_upper: None,
            rw_sd_prob: 0.01,
        }
    }
}

impl PcPriorSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("range_prob", self.range_prob),
            ("sigma_prob", self.sigma_prob),
            ("rw_sd_prob", self.rw_sd_prob),
        ];
        for (name, p) in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1): {p}")));
            }
        }
        if !(self.range_lower_km > 0.0) || !(self.sigma_upper > 0.0) {
            return Err(Error::Domain(
                "prior thresholds must be positive".into(),
            ));
        }
        if let Some(u) = self.rw_sd_upper {
            if !(u > 0.0) {
                return Err(Error::Domain(format!(
                    "rw_sd_upper must be positive: {u}"
                )));
            }
        }
        Ok(())
    }
}

const DIM: f64 = 2.0;

/// Log density of the joint PC prior on (range, sigma) of the Matérn field:
/// `(d/2) R r^{-1-d/2} exp(-R r^{-d/2}) * S exp(-S sigma)` with d = 2,
/// `R = -ln(range_prob) * range_lower^{d/2}` and
/// `S = -ln(sigma_prob) / sigma_upper`.
pub fn pc_prior_logdensity_matern(r: f64, sigma: f64, spec: &PcPriorSpec) -> f64 {
    let big_r = -spec.range_prob.ln() * spec.range_lower_km.powf(DIM / 2.0);
    let big_s = -spec.sigma_prob.ln() / spec.sigma_upper;
    (DIM / 2.0).ln() + big_r.ln() - (1.0 + DIM / 2.0) * r.ln() - big_r * r.powf(-DIM / 2.0)
        + big_s.ln()
        - big_s * sigma
}

/// Log density of the exponential PC prior on the random-walk increment SD.
pub fn rw_sd_log_prior(sd: f64, upper: f64, prob: f64) -> f64 {
    let lambda = -prob.ln() / upper;
    lambda.ln() - lambda * sd
}

/// Intrinsic Gaussian log density of a random-walk trend vector given the
/// increment precision `tau`: the product of the `n - order` increment
/// densities, so the normalizing exponent carries the rank deficiency.
pub fn rw_penalty(trend: &[f64], order: usize, tau: f64) -> Result<f64> {
    if !(order == 1 || order == 2) {
        return Err(Error::Domain(format!("rw order must be 1 or 2: {order}")));
    }
    if trend.len() < order + 1 {
        return Err(Error::InsufficientData(format!(
            "rw penalty needs at least {} points, got {}",
            order + 1,
            trend.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive: {tau}")));
    }
    let mut ss = 0.0;
    match order {
        1 => {
            for w in trend.windows(2) {
                let d = w[1] - w[0];
                ss += d * d;
            }
        }
        _ => {
            for w in trend.windows(3) {
                let d = w[2] - 2.0 * w[1] + w[0];
                ss += d * d;
            }
        }
    }
    let k = (trend.len() - order) as f64;
    Ok(k / 2.0 * (tau.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * tau * ss)
}
