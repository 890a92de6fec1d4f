//! Monte-Carlo rank-correlation test for preferential sampling of a
//! monitoring network.
//!
//! The statistic is Spearman's rho between each site's mean distance to its
//! k nearest network neighbours and the response at the site. Under
//! preferential placement toward high concentrations, dense clusters sit on
//! high values and the correlation goes negative. The null distribution
//! comes from networks drawn uniformly over the region, with responses read
//! from the kriged surface.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{sample_uniform, PointKm, Polygon};
use crate::model::PredictionSurface;
use crate::stats;

/// Result of the test for one year.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsTestResult {
    pub year: i32,
    pub n_sites: usize,
    pub k: usize,
    pub m: usize,
    pub rho_obs: f64,
    /// Spearman rho of each simulated null network, length `m`.
    pub null_rhos: Vec<f64>,
    /// `(1 + #{null <= rho_obs}) / (m + 1)`: add-one lower-tail p.
    pub p_lower: f64,
    /// Two-sided analogue on `|rho|`.
    pub p_two_sided: f64,
    pub seed: u64,
}

/// One entry of the per-year series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsSeriesEntry {
    Tested(PsTestResult),
    Skipped {
        year: i32,
        n_sites: usize,
        reason: String,
    },
    /// Gap filled from the nearest tested neighbours; carries provenance.
    Interpolated {
        year: i32,
        rho: f64,
        left_year: i32,
        right_year: i32,
        reason: String,
    },
}

impl PsSeriesEntry {
    pub fn year(&self) -> i32 {
        match self {
            PsSeriesEntry::Tested(r) => r.year,
            PsSeriesEntry::Skipped { year, .. } => *year,
            PsSeriesEntry::Interpolated { year, .. } => *year,
        }
    }

    pub fn rho(&self, use_interpolated: bool) -> Option<f64> {
        match self {
            PsSeriesEntry::Tested(r) => Some(r.rho_obs),
            PsSeriesEntry::Interpolated { rho, .. } if use_interpolated => Some(*rho),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsSeries {
    pub entries: Vec<PsSeriesEntry>,
}

impl PsSeries {
    /// Year-ordered (year, rho) pairs; interpolated entries included on
    /// demand.
    pub fn rho_series(&self, use_interpolated: bool) -> Vec<(i32, f64)> {
        self.entries
            .iter()
            .filter_map(|e| e.rho(use_interpolated).map(|r| (e.year(), r)))
            .collect()
    }
}

/// Mean distance from each point to its k nearest neighbours (exact).
pub fn knn_mean_distance(points: &[PointKm], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "knn distance needs more than k = {k} points, got {n}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for (i, p) in points.iter().enumerate() {
        dists.clear();
        for (j, q) in points.iter().enumerate() {
            if i != j {
                dists.push(p.dist(q));
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(dists[..k].iter().sum::<f64>() / k as f64);
    }
    Ok(out)
}

/// Spearman rank correlation with mid-ranks on ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(
            "rank correlation needs at least 3 pairs".into(),
        ));
    }
    let rx = stats::mid_ranks(x);
    let ry = stats::mid_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroRankVariance { side: "first" });
    }
    if syy == 0.0 {
        return Err(Error::ZeroRankVariance { side: "second" });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Watson's test for one year.
///
/// `sites` pairs each location with its observed response. For each of `m`
/// replicates a network of the same size is drawn uniformly over the
/// polygon and responses are read from the kriged surface at the nearest
/// grid pixel; replicate RNG streams derive from `(seed, replicate)` so the
/// result does not depend on scheduling.
pub fn ps_test(
    year: i32,
    sites: &[(PointKm, f64)],
    surface: &PredictionSurface,
    poly: &Polygon,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<PsTestResult> {
    let n = sites.len();
    if n < k + 2 || n < 3 {
        return Err(Error::InsufficientData(format!(
            "test needs at least max(k + 2, 3) = {} sites, got {n}",
            (k + 2).max(3)
        )));
    }
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    let points: Vec<PointKm> = sites.iter().map(|&(p, _)| p).collect();
    let responses: Vec<f64> = sites.iter().map(|&(_, r)| r).collect();
    let rho_obs = spearman_rho(&knn_mean_distance(&points, k)?, &responses)?;

    let null_rhos: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut rng = ChaCha12Rng::seed_from_u64(stats::mix_seed(seed, rep as u64));
            let pts = sample_uniform(poly, n, &mut rng)?;
            let resp: Result<Vec<f64>> = pts.iter().map(|&p| surface.value_at(p)).collect();
            spearman_rho(&knn_mean_distance(&pts, k)?, &resp?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let below = null_rhos.iter().filter(|&&r| r <= rho_obs).count();
    let extreme = null_rhos
        .iter()
        .filter(|&&r| r.abs() >= rho_obs.abs())
        .count();
    Ok(PsTestResult {
        year,
        n_sites: n,
        k,
        m,
        rho_obs,
        null_rhos,
        p_lower: (1 + below) as f64 / (m + 1) as f64,
        p_two_sided: (1 + extreme) as f64 / (m + 1) as f64,
        seed,
    })
}

/// Run the test for every qualifying year; years with fewer than
/// `max(k + 2, n_min)` sites (or no surface) are recorded as skipped.
/// Per-year seeds derive from the master seed and the year.
pub fn ps_test_series(
    data: &[(i32, Vec<(PointKm, f64)>)],
    surfaces: &[PredictionSurface],
    poly: &Polygon,
    k: usize,
    m: usize,
    master_seed: u64,
    n_min: usize,
) -> PsSeries {
    let surface_by_year: BTreeMap<i32, &PredictionSurface> =
        surfaces.iter().map(|s| (s.year, s)).collect();
    let mut years: Vec<&(i32, Vec<(PointKm, f64)>)> = data.iter().collect();
    years.sort_by_key(|(y, _)| *y);
    let threshold = n_min.max(k + 2);
    let entries = years
        .into_iter()
        .map(|(year, sites)| {
            let n = sites.len();
            if n < threshold {
                return PsSeriesEntry::Skipped {
                    year: *year,
                    n_sites: n,
                    reason: format!("{n} sites, need at least {threshold}"),
                };
            }
            let Some(surface) = surface_by_year.get(year) else {
                return PsSeriesEntry::Skipped {
                    year: *year,
                    n_sites: n,
                    reason: "no kriged surface for this year".into(),
                };
            };
            let seed = stats::mix_seed(master_seed, *year as u64);
            match ps_test(*year, sites, surface, poly, k, m, seed) {
                Ok(r) => PsSeriesEntry::Tested(r),
                Err(e) => PsSeriesEntry::Skipped {
                    year: *year,
                    n_sites: n,
                    reason: e.to_string(),
                },
            }
        })
        .collect();
    PsSeries { entries }
}

/// Fill gaps bounded by tested years with the mean of the nearest tested
/// neighbours on each side; edge gaps stay skipped.
pub fn interpolate_missing(series: &PsSeries) -> PsSeries {
    let tested: Vec<(usize, i32, f64)> = series
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e {
            PsSeriesEntry::Tested(r) => Some((i, r.year, r.rho_obs)),
            _ => None,
        })
        .collect();
    let entries = series
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| match e {
            PsSeriesEntry::Skipped {
                year,
                n_sites: _,
                reason,
            } => {
                let left = tested.iter().rev().find(|&&(j, _, _)| j < i);
                let right = tested.iter().find(|&&(j, _, _)| j > i);
                match (left, right) {
                    (Some(&(_, ly, lr)), Some(&(_, ry, rr))) => PsSeriesEntry::Interpolated {
                        year: *year,
                        rho: 0.5 * (lr + rr),
                        left_year: ly,
                        right_year: ry,
                        reason: reason.clone(),
                    },
                    _ => e.clone(),
                }
            }
            other => other.clone(),
        })
        .collect();
    PsSeries { entries }
}

/// Sample autocorrelation (lags `0..=max_lag`), partial autocorrelation
/// (lags `1..=max_lag`, Durbin-Levinson) and the normal-approximation
/// confidence band `qnorm((1 + ci) / 2) / sqrt(N)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcfPacf {
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
    pub band: f64,
}

pub fn acf_pacf(series: &[f64], max_lag: usize, ci: f64) -> Result<AcfPacf> {
    let n = series.len();
    if n < max_lag + 2 {
        return Err(Error::InsufficientData(format!(
            "need at least max_lag + 2 = {} points, got {n}",
            max_lag + 2
        )));
    }
    if !(ci > 0.0 && ci < 1.0) {
        return Err(Error::Domain(format!("ci must lie in (0, 1): {ci}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if c0 == 0.0 {
        return Err(Error::Domain("constant series has no autocorrelation".into()));
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut c = 0.0;
        for t in 0..(n - lag) {
            c += (series[t] - mean) * (series[t + lag] - mean);
        }
        acf.push(c / c0);
    }
    // Durbin-Levinson recursion
    let mut pacf = Vec::with_capacity(max_lag);
    let mut prev: Vec<f64> = Vec::new();
    for kk in 1..=max_lag {
        let phi = if kk == 1 {
            acf[1]
        } else {
            let num = acf[kk]
                - prev
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * acf[kk - 1 - j])
                    .sum::<f64>();
            let den = 1.0
                - prev
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * acf[j + 1])
                    .sum::<f64>();
            num / den
        };
        let mut cur = vec![0.0; kk];
        for j in 0..kk.saturating_sub(1) {
            cur[j] = prev[j] - phi * prev[kk - 2 - j];
        }
        cur[kk - 1] = phi;
        pacf.push(phi);
        prev = cur;
    }
    Ok(AcfPacf {
        acf,
        pacf,
        band: stats::normal_quantile((1.0 + ci) / 2.0) / (n as f64).sqrt(),
    })
}

/// Spearman correlations between the test-rho series and the per-year
/// counts of added and removed sites. Each side may fail independently
/// (for example constant counts have no rank variance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteChangeCorrelation {
    pub use_interpolated: bool,
    pub n_years: usize,
    pub additions: std::result::Result<f64, String>,
    pub removals: std::result::Result<f64, String>,
}

pub fn correlate_site_changes(
    series: &PsSeries,
    additions: &[(i32, usize)],
    removals: &[(i32, usize)],
    use_interpolated: bool,
) -> Result<SiteChangeCorrelation> {
    let add: BTreeMap<i32, usize> = additions.iter().copied().collect();
    let rem: BTreeMap<i32, usize> = removals.iter().copied().collect();
    let rhos = series.rho_series(use_interpolated);
    if rhos.is_empty() {
        return Err(Error::InsufficientData("no tested years in series".into()));
    }
    let mut rho_v = Vec::with_capacity(rhos.len());
    let mut add_v = Vec::with_capacity(rhos.len());
    let mut rem_v = Vec::with_capacity(rhos.len());
    for (year, rho) in &rhos {
        let (Some(a), Some(r)) = (add.get(year), rem.get(year)) else {
            return Err(Error::DataMismatch(format!(
                "no site-change counts for year {year}"
            )));
        };
        rho_v.push(*rho);
        add_v.push(*a as f64);
        rem_v.push(*r as f64);
    }
    Ok(SiteChangeCorrelation {
        use_interpolated,
        n_years: rho_v.len(),
        additions: spearman_rho(&rho_v, &add_v).map_err(|e| e.to_string()),
        removals: spearman_rho(&rho_v, &rem_v).map_err(|e| e.to_string()),
    })
}

/// Equal-width histogram of the null statistics, for plotting.
pub fn histogram(values: &[f64], n_bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-12);
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    (0..n_bins)
        .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, counts[b]))
        .collect()
}
