//! Matérn spatial correlation, empirical semivariograms with weighted
//! least-squares fitting, and the separable space-time covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PointKm;
use crate::special::bessel_k;
use crate::stats;

/// Smoothness is usable in [0.5, 2]; values outside are clamped.
pub const KAPPA_MIN: f64 = 0.5;
pub const KAPPA_MAX: f64 = 2.0;

/// Matérn parameters. `range_km` is the distance where the correlation has
/// decayed to roughly 0.1; the internal scale is `phi = range / sqrt(8 kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub kappa: f64,
    pub range_km: f64,
    /// Marginal standard deviation of the spatial field.
    pub sigma: f64,
    /// Measurement-error variance added on the diagonal only.
    pub nugget_var: f64,
}

impl MaternParams {
    pub fn new(kappa: f64, range_km: f64, sigma: f64, nugget_var: f64) -> Result<Self> {
        if !(range_km > 0.0) {
            return Err(Error::Domain(format!("range must be positive: {range_km}")));
        }
        if sigma < 0.0 || nugget_var < 0.0 {
            return Err(Error::Domain(
                "sigma and nugget variance must be nonnegative".into(),
            ));
        }
        Ok(Self {
            kappa: kappa.clamp(KAPPA_MIN, KAPPA_MAX),
            range_km,
            sigma,
            nugget_var,
        })
    }
}

/// AR(1) temporal dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub a: f64,
    pub sigma_w: f64,
}

impl TemporalParams {
    pub fn new(a: f64, sigma_w: f64) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return Err(Error::Domain(format!("AR(1) coefficient |a| < 1 required: {a}")));
        }
        if !(sigma_w > 0.0) {
            return Err(Error::Domain(format!("sigma_w must be positive: {sigma_w}")));
        }
        Ok(Self { a, sigma_w })
    }

    /// Stationary marginal variance sigma_w^2 / (1 - a^2).
    pub fn marginal_var(&self) -> f64 {
        self.sigma_w * self.sigma_w / (1.0 - self.a * self.a)
    }
}

/// Spatial scale parameter from the 0.1-correlation range convention.
pub fn range_to_phi(range_km: f64, kappa: f64) -> f64 {
    range_km / (8.0 * kappa).sqrt()
}

/// Matérn correlation with the constants precomputed; use this in loops.
#[derive(Debug, Clone, Copy)]
pub struct MaternKernel {
    kappa: f64,
    phi: f64,
    norm: f64,
}

impl MaternKernel {
    pub fn new(kappa: f64, range_km: f64) -> Result<Self> {
        if !(range_km > 0.0) {
            return Err(Error::Domain(format!("range must be positive: {range_km}")));
        }
        let kappa = kappa.clamp(KAPPA_MIN, KAPPA_MAX);
        let norm = 2f64.powf(1.0 - kappa) / statrs::function::gamma::gamma(kappa);
        Ok(Self {
            kappa,
            phi: range_to_phi(range_km, kappa),
            norm,
        })
    }

    /// Correlation at distance `u` km; 1 at zero distance by continuity.
    pub fn corr(&self, u: f64) -> f64 {
        let t = u / self.phi;
        if t < 1e-10 {
            return 1.0;
        }
        match bessel_k(self.kappa, t) {
            Ok(k) => (self.norm * t.powf(self.kappa) * k).clamp(0.0, 1.0),
            // K underflows only for huge t where the correlation is zero
            Err(_) => 0.0,
        }
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Matérn correlation `2^{1-kappa} Gamma(kappa)^{-1} (u/phi)^kappa K_kappa(u/phi)`.
pub fn matern_corr(u: f64, p: &MaternParams) -> f64 {
    MaternKernel::new(p.kappa, p.range_km)
        .expect("validated params")
        .corr(u)
}

/// One distance bin of an empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance in the bin, km.
    pub dist_km: f64,
    pub semivariance: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    pub bins: Vec<VariogramBin>,
    pub max_dist_km: f64,
}

pub const DEFAULT_VARIOGRAM_BINS: usize = 12;
pub const DEFAULT_VARIOGRAM_MAX_DIST_KM: f64 = 80.0;

/// Binned semivariances `sum (z_i - z_j)^2 / (2 N_h)` over pairs closer
/// than `max_dist_km`. Empty bins are dropped.
pub fn empirical_variogram(
    obs: &[(PointKm, f64)],
    n_bins: usize,
    max_dist_km: f64,
) -> Result<EmpiricalVariogram> {
    if obs.len() < 2 {
        return Err(Error::InsufficientData(
            "empirical variogram needs at least 2 observations".into(),
        ));
    }
    if n_bins == 0 || !(max_dist_km > 0.0) {
        return Err(Error::Domain("n_bins and max_dist must be positive".into()));
    }
    let width = max_dist_km / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut sum_d = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..obs.len() {
        for j in (i + 1)..obs.len() {
            let d = obs[i].0.dist(&obs[j].0);
            if d > max_dist_km {
                continue;
            }
            let b = ((d / width) as usize).min(n_bins - 1);
            let dz = obs[i].1 - obs[j].1;
            sum_sq[b] += dz * dz;
            sum_d[b] += d;
            count[b] += 1;
        }
    }
    let bins = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            dist_km: sum_d[b] / count[b] as f64,
            semivariance: sum_sq[b] / (2.0 * count[b] as f64),
            n_pairs: count[b],
        })
        .collect();
    Ok(EmpiricalVariogram {
        bins,
        max_dist_km,
    })
}

/// Weighted least-squares Matérn fit of an empirical variogram.
///
/// The model is `gamma(h) = nugget + psill (1 - corr(h; range))` with
/// Cressie weights `N_h / h^2`. The range is profiled over a fixed
/// logarithmic grid of candidates and refined by golden-section search, so
/// the fit is deterministic. Returns `MaternParams` with
/// `sigma = sqrt(psill)`.
pub fn fit_variogram(ev: &EmpiricalVariogram, kappa: f64) -> Result<MaternParams> {
    let usable: Vec<&VariogramBin> = ev.bins.iter().filter(|b| b.n_pairs > 0).collect();
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "variogram fit needs at least 4 nonempty bins, got {}",
            usable.len()
        )));
    }
    if usable.iter().all(|b| b.semivariance == 0.0) {
        return Ok(MaternParams::new(kappa, ev.max_dist_km, 0.0, 0.0)?);
    }

    let weights: Vec<f64> = usable
        .iter()
        .map(|b| b.n_pairs as f64 / b.dist_km.max(1e-6).powi(2))
        .collect();

    let wss_at = |range: f64| -> (f64, f64, f64) {
        let kernel = MaternKernel::new(kappa, range).expect("positive range");
        // linear WLS in (nugget, psill) given the range
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (bin, &w) in usable.iter().zip(&weights) {
            let c = 1.0 - kernel.corr(bin.dist_km);
            s11 += w;
            s12 += w * c;
            s22 += w * c * c;
            b1 += w * bin.semivariance;
            b2 += w * c * bin.semivariance;
        }
        let det = s11 * s22 - s12 * s12;
        let (mut nugget, mut psill) = if det.abs() > 1e-14 * s11 * s22.max(1.0) {
            (
                (s22 * b1 - s12 * b2) / det,
                (s11 * b2 - s12 * b1) / det,
            )
        } else {
            (0.0, if s22 > 0.0 { b2 / s22 } else { 0.0 })
        };
        if psill < 0.0 {
            psill = 0.0;
            nugget = (b1 / s11).max(0.0);
        } else if nugget < 0.0 {
            nugget = 0.0;
            psill = (b2 / s22).max(0.0);
        }
        let mut wss = 0.0;
        for (bin, &w) in usable.iter().zip(&weights) {
            let c = 1.0 - kernel.corr(bin.dist_km);
            let r = bin.semivariance - nugget - psill * c;
            wss += w * r * r;
        }
        (wss, nugget, psill)
    };

    // fixed log grid of candidate ranges, then a golden-section polish
    let h_min = usable.first().unwrap().dist_km.max(ev.max_dist_km / 200.0);
    let lo = (h_min / 4.0).ln();
    let hi = (ev.max_dist_km * 100.0).ln();
    let n_grid = 60;
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0); // wss, range, nugget, psill
    for g in 0..n_grid {
        let r = (lo + (hi - lo) * g as f64 / (n_grid - 1) as f64).exp();
        let (wss, nugget, psill) = wss_at(r);
        if wss < best.0 {
            best = (wss, r, nugget, psill);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NonConvergence {
            evals: n_grid,
            best: best.0,
        });
    }
    let step = (hi - lo) / (n_grid - 1) as f64;
    let (mut a, mut b) = (best.1.ln() - step, best.1.ln() + step);
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let mut x1 = a + golden * (b - a);
    let mut x2 = b - golden * (b - a);
    let mut f1 = wss_at(x1.exp()).0;
    let mut f2 = wss_at(x2.exp()).0;
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = a + golden * (b - a);
            f1 = wss_at(x1.exp()).0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = b - golden * (b - a);
            f2 = wss_at(x2.exp()).0;
        }
    }
    let range = if f1 < f2 { x1.exp() } else { x2.exp() };
    let (wss, nugget, psill) = wss_at(range);
    let (range, nugget, psill) = if wss <= best.0 {
        (range, nugget, psill)
    } else {
        (best.1, best.2, best.3)
    };
    MaternParams::new(kappa, range, psill.sqrt(), nugget)
}

/// Default quantile probabilities for the per-year parameter table.
pub const DEFAULT_QUANTILE_PROBS: [f64; 12] = [
    0.0, 0.01, 0.05, 0.10, 0.15, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99, 1.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub prob: f64,
    pub range_km: f64,
    pub psill: f64,
}

/// Linear-interpolation quantiles of range and partial sill across years.
pub fn variogram_quantiles(params: &[MaternParams], probs: &[f64]) -> Result<Vec<QuantileRow>> {
    if params.is_empty() {
        return Err(Error::InsufficientData("no variogram parameters".into()));
    }
    let mut ranges: Vec<f64> = params.iter().map(|p| p.range_km).collect();
    let mut psills: Vec<f64> = params.iter().map(|p| p.sigma * p.sigma).collect();
    ranges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    psills.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(probs
        .iter()
        .map(|&p| QuantileRow {
            prob: p,
            range_km: stats::quantile_sorted(&ranges, p),
            psill: stats::quantile_sorted(&psills, p),
        })
        .collect())
}

/// Dense covariance of the separable space-time field over the complete
/// `sites x years` design, ordered year-major (site index varies fastest).
///
/// `Cov[(s,t),(s',t')] = sigma_w^2/(1-a^2) a^{|t-t'|} corr(||s-s'||)` with
/// the nugget variance added on the diagonal. The result is verified to be
/// positive definite by a Cholesky factorization.
pub fn build_covariance(
    points: &[PointKm],
    years: &[i32],
    sp: &MaternParams,
    tp: &TemporalParams,
) -> Result<DMatrix<f64>> {
    let s = points.len();
    let t = years.len();
    if s == 0 || t == 0 {
        return Err(Error::InsufficientData("empty design".into()));
    }
    let kernel = MaternKernel::new(sp.kappa, sp.range_km)?;
    let mv = tp.marginal_var();

    let mut rho = DMatrix::zeros(s, s);
    for i in 0..s {
        rho[(i, i)] = 1.0;
        for j in 0..i {
            let c = kernel.corr(points[i].dist(&points[j]));
            rho[(i, j)] = c;
            rho[(j, i)] = c;
        }
    }
    let max_lag = years
        .iter()
        .flat_map(|&a| years.iter().map(move |&b| (a - b).unsigned_abs()))
        .max()
        .unwrap() as usize;
    let mut apow = Vec::with_capacity(max_lag + 1);
    apow.push(1.0);
    for k in 1..=max_lag {
        apow.push(apow[k - 1] * tp.a);
    }

    let n = s * t;
    let mut cov = DMatrix::zeros(n, n);
    for ti in 0..t {
        for tj in 0..t {
            let lag = (years[ti] - years[tj]).unsigned_abs() as usize;
            let scale = mv * apow[lag];
            for si in 0..s {
                for sj in 0..s {
                    cov[(ti * s + si, tj * s + sj)] = scale * rho[(si, sj)];
                }
            }
        }
    }
    for i in 0..n {
        cov[(i, i)] += sp.nugget_var;
    }
    if nalgebra::Cholesky::new(cov.clone()).is_none() {
        return Err(Error::NotPositiveDefinite {
            hint: "; consider adding a small diagonal jitter".into(),
        });
    }
    Ok(cov)
}
