//! Kriging prediction: Gaussian conditional mean and SD of the noise-free
//! process at new locations given all observations.

use std::collections::HashMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::MaternKernel;
use crate::error::{Error, Result};
use crate::geo::PointKm;

use super::FittedModel;

/// Posterior mean and SD of the latent process on a prediction grid for
/// one year. Carries a lattice index so the nearest pixel of an arbitrary
/// point can be found in constant time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSurface {
    pub year: i32,
    pub spacing_km: f64,
    pub points: Vec<PointKm>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    #[serde(skip)]
    index: HashMap<(i64, i64), usize>,
    #[serde(skip)]
    origin: (f64, f64),
}

impl PredictionSurface {
    pub fn new(
        year: i32,
        spacing_km: f64,
        points: Vec<PointKm>,
        mean: Vec<f64>,
        sd: Vec<f64>,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != mean.len() || points.len() != sd.len() {
            return Err(Error::Domain(
                "surface needs equally many points, means and sds".into(),
            ));
        }
        if !(spacing_km > 0.0) {
            return Err(Error::Domain(format!("bad grid spacing {spacing_km}")));
        }
        if sd.iter().any(|s| *s < 0.0) {
            return Err(Error::Domain("negative prediction SD".into()));
        }
        let origin = points.iter().fold((f64::INFINITY, f64::INFINITY), |acc, p| {
            (acc.0.min(p.x), acc.1.min(p.y))
        });
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let key = Self::key_of(origin, spacing_km, *p);
            if index.insert(key, i).is_some() {
                return Err(Error::Domain(
                    "surface points do not form a lattice (duplicate cell)".into(),
                ));
            }
        }
        Ok(Self {
            year,
            spacing_km,
            points,
            mean,
            sd,
            index,
            origin,
        })
    }

    fn key_of(origin: (f64, f64), spacing: f64, p: PointKm) -> (i64, i64) {
        (
            ((p.x - origin.0) / spacing).round() as i64,
            ((p.y - origin.1) / spacing).round() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest grid pixel, or an error if none lies within one
    /// grid spacing. Exact ties resolve to the smallest lattice key.
    pub fn nearest_index(&self, p: PointKm) -> Result<usize> {
        let (kx, ky) = Self::key_of(self.origin, self.spacing_km, p);
        let mut best: Option<(f64, (i64, i64), usize)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let key = (kx + dx, ky + dy);
                if let Some(&i) = self.index.get(&key) {
                    let d = self.points[i].dist(&p);
                    let candidate = (d, (key.1, key.0), i);
                    let better = match &best {
                        None => true,
                        Some((bd, bkey, _)) => {
                            d < *bd - 1e-12
                                || ((d - *bd).abs() <= 1e-12 && (key.1, key.0) < *bkey)
                        }
                    };
                    if better {
                        best = Some(candidate);
                    }
                }
            }
        }
        match best {
            Some((d, _, i)) if d <= self.spacing_km => Ok(i),
            Some((d, _, _)) => Err(Error::GridTooCoarse {
                nearest_km: d,
                spacing_km: self.spacing_km,
            }),
            None => Err(Error::GridTooCoarse {
                nearest_km: f64::INFINITY,
                spacing_km: self.spacing_km,
            }),
        }
    }

    /// Posterior mean at the nearest pixel.
    pub fn value_at(&self, p: PointKm) -> Result<f64> {
        Ok(self.mean[self.nearest_index(p)?])
    }
}

/// Conditional mean and latent variance at arbitrary space-time points.
/// The variance excludes the nugget; add `1/tau_eps` for an observation.
pub(crate) fn predict_points(
    model: &FittedModel,
    pts: &[(PointKm, i32)],
) -> Result<Vec<(f64, f64)>> {
    let state = model.state()?;
    let (first, last) = model.year_span();
    for &(_, year) in pts {
        if year < first || year > last {
            return Err(Error::YearOutsideSpan { year, first, last });
        }
    }
    let kernel = MaternKernel::new(model.kappa, model.spatial.range_km)?;
    let mv = model.marginal_var();
    let n = state.alpha.len();
    let t_len = model.years.len();
    let mut apow = Vec::with_capacity(t_len);
    apow.push(1.0);
    for k in 1..t_len {
        apow.push(apow[k - 1] * model.a);
    }

    // spatial correlation against the unique sites, reused per point
    let mut out = Vec::with_capacity(pts.len());
    let mut rho_site = vec![0.0; state.sites.len()];
    let p_fixed = state.x.ncols();
    for &(g, year) in pts {
        let t_idx = (year - first) as usize;
        for (si, s) in state.sites.iter().enumerate() {
            rho_site[si] = kernel.corr(g.dist(s));
        }
        let mut c = DVector::zeros(n);
        for i in 0..n {
            let lag = state.obs_year[i].abs_diff(t_idx);
            let mut v = mv * apow[lag] * rho_site[state.obs_site[i]];
            if let Some(tc) = &state.trend_cov {
                v += tc[(t_idx, state.obs_year[i])];
            }
            c[i] = v;
        }
        // fixed-effect row for the new point: intercept, fixed time trend,
        // retention dummies at the baseline category
        let mut x_star = DVector::zeros(p_fixed);
        x_star[0] = 1.0;
        let tc_year = year as f64 - model.year_center;
        match model.trend_kind {
            super::TrendKind::Linear => x_star[1] = tc_year,
            super::TrendKind::Quadratic => {
                x_star[1] = tc_year;
                x_star[2] = tc_year * tc_year;
            }
            _ => {}
        }

        let si_c = state.chol.solve(&c);
        let mean = x_star.dot(&state.beta) + c.dot(&state.alpha);
        let c_star = mv
            + state
                .trend_cov
                .as_ref()
                .map(|tc| tc[(t_idx, t_idx)])
                .unwrap_or(0.0);
        let g_vec = &x_star - state.w.transpose() * &c;
        let var_beta = (g_vec.transpose() * &state.m_inv * &g_vec)[(0, 0)];
        let var = (c_star - c.dot(&si_c) + var_beta).max(0.0);
        out.push((mean, var));
    }
    Ok(out)
}

/// Conditional mean and latent SD at arbitrary space-time points (no
/// lattice structure required). The variance excludes the nugget.
pub fn predict_at(
    model: &FittedModel,
    pts: &[(PointKm, i32)],
) -> Result<Vec<(f64, f64)>> {
    Ok(predict_points(model, pts)?
        .into_iter()
        .map(|(m, v)| (m, v.sqrt()))
        .collect())
}

/// Kriged surfaces for several years over one grid; the spatial correlation
/// block is shared across years.
pub fn predict_surfaces(
    model: &FittedModel,
    grid: &[PointKm],
    spacing_km: f64,
    years: &[i32],
) -> Result<Vec<PredictionSurface>> {
    if grid.is_empty() {
        return Err(Error::Domain("empty prediction grid".into()));
    }
    let mut out = Vec::with_capacity(years.len());
    for &year in years {
        let pts: Vec<(PointKm, i32)> = grid.iter().map(|&g| (g, year)).collect();
        let mv = predict_points(model, &pts)?;
        let mean: Vec<f64> = mv.iter().map(|&(m, _)| m).collect();
        let sd: Vec<f64> = mv.iter().map(|&(_, v)| v.sqrt()).collect();
        out.push(PredictionSurface::new(
            year,
            spacing_km,
            grid.to_vec(),
            mean,
            sd,
        )?);
    }
    Ok(out)
}

/// Kriged surface for a single year.
pub fn predict(
    model: &FittedModel,
    grid: &[PointKm],
    spacing_km: f64,
    year: i32,
) -> Result<PredictionSurface> {
    Ok(predict_surfaces(model, grid, spacing_km, &[year])?
        .into_iter()
        .next()
        .expect("one year requested"))
}
