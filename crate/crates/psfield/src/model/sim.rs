//! Exact simulation from the separable space-time model, used by the
//! recovery and calibration studies.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::MaternKernel;
use crate::error::{Error, Result};
use crate::geo::PointKm;
use crate::ingest::Observation;

/// Generating parameters for a synthetic data set on a complete design.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub sites: Vec<PointKm>,
    pub years: Vec<i32>,
    pub beta0: f64,
    /// Per-year trend offsets; empty for no trend.
    pub trend: Vec<f64>,
    pub kappa: f64,
    pub range_km: f64,
    pub sigma_w: f64,
    pub a: f64,
    pub tau_eps: f64,
}

/// Draw one data set: the field starts from its stationary distribution and
/// evolves by the AR(1) recursion with spatially correlated innovations;
/// white noise with precision `tau_eps` is added on top.
pub fn simulate(spec: &SimSpec, seed: u64) -> Result<Vec<Observation>> {
    let s = spec.sites.len();
    let t = spec.years.len();
    if s == 0 || t == 0 {
        return Err(Error::InsufficientData("empty simulation design".into()));
    }
    if !spec.trend.is_empty() && spec.trend.len() != t {
        return Err(Error::Domain(format!(
            "trend length {} != number of years {t}",
            spec.trend.len()
        )));
    }
    if !(spec.a.abs() < 1.0) || !(spec.sigma_w > 0.0) || !(spec.tau_eps > 0.0) {
        return Err(Error::Domain("need |a| < 1, sigma_w > 0, tau_eps > 0".into()));
    }
    let kernel = MaternKernel::new(spec.kappa, spec.range_km)?;
    let mut rho = DMatrix::identity(s, s);
    for i in 0..s {
        for j in 0..i {
            let c = kernel.corr(spec.sites[i].dist(&spec.sites[j]));
            rho[(i, j)] = c;
            rho[(j, i)] = c;
        }
    }
    // small jitter guards the factorization of nearly co-located sites
    for i in 0..s {
        rho[(i, i)] += 1e-10;
    }
    let chol = nalgebra::Cholesky::new(rho).ok_or(Error::NotPositiveDefinite {
        hint: " (simulation correlation; are sites co-located?)".into(),
    })?;
    let l = chol.l();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draw = |scale: f64, rng: &mut ChaCha12Rng| -> DVector<f64> {
        let g = DVector::from_fn(s, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        &l * g * scale
    };

    let marg_sd = spec.sigma_w / (1.0 - spec.a * spec.a).sqrt();
    let noise_sd = spec.tau_eps.sqrt().recip();
    let mut field = draw(marg_sd, &mut rng);
    let mut out = Vec::with_capacity(s * t);
    for (ti, &year) in spec.years.iter().enumerate() {
        if ti > 0 {
            field = &field * spec.a + draw(spec.sigma_w, &mut rng);
        }
        let trend = spec.trend.get(ti).copied().unwrap_or(0.0);
        for (si, &site) in spec.sites.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let z = spec.beta0 + trend + field[si] + noise_sd * eps;
            out.push(Observation {
                site_id: format!("sim-{si:03}"),
                location: site,
                year,
                pm_mean: 70.0 * z.exp(),
                z,
            });
        }
    }
    Ok(out)
}

/// Evenly jittered site layout inside a rectangle, handy for tests.
pub fn lattice_sites(nx: usize, ny: usize, width_km: f64, height_km: f64) -> Vec<PointKm> {
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push(PointKm::new(
                (i as f64 + 0.5) * width_km / nx as f64,
                (j as f64 + 0.5) * height_km / ny as f64,
            ));
        }
    }
    out
}
