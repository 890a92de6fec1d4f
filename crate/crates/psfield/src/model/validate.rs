//! Holdout validation: withhold a random share of the observations, refit,
//! predict the held-out points and report standardized residuals and
//! empirical coverage of the central 95% predictive interval.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Observation, SiteTimeline};

use super::fit::{fit_map, FitConfig};
use super::predict::predict_points;

const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub site_id: String,
    pub year: i32,
    pub observed_z: f64,
    pub predicted_mean: f64,
    /// Predictive SD for a new observation (latent SD plus nugget).
    pub predicted_sd: f64,
    pub std_residual: f64,
    pub outside_95: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub n_total: usize,
    pub n_holdout: usize,
    pub fraction: f64,
    pub seed: u64,
    pub share_outside_95: f64,
    /// Nominal share outside a central 95% interval, for comparison.
    pub nominal_share: f64,
    /// Reference share observed in the motivating real-data study.
    pub reference_real_data_share: f64,
    pub rows: Vec<HoldoutRow>,
    /// (year, n outside, n held) for years that kept training data.
    pub by_year: Vec<(i32, usize, usize)>,
    /// (site, n outside, n held)
    pub by_site: Vec<(String, usize, usize)>,
    pub warnings: Vec<String>,
}

/// Withhold `ceil(fraction * n)` observations chosen by the seeded RNG,
/// refit on the remainder and predict the held-out values.
pub fn validate_holdout(
    obs: &[Observation],
    timelines: Option<&[SiteTimeline]>,
    fraction: f64,
    seed: u64,
    cfg: &FitConfig,
) -> Result<HoldoutReport> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Domain(format!(
            "holdout fraction must lie in (0, 0.5]: {fraction}"
        )));
    }
    let n = obs.len();
    let n_holdout = ((fraction * n as f64).ceil() as usize).max(1);
    if n_holdout + 2 > n {
        return Err(Error::InsufficientData(format!(
            "cannot hold out {n_holdout} of {n} observations"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut held: Vec<usize> = idx[..n_holdout].to_vec();
    held.sort_unstable();
    let held_set: std::collections::BTreeSet<usize> = held.iter().copied().collect();

    let train: Vec<Observation> = obs
        .iter()
        .enumerate()
        .filter(|(i, _)| !held_set.contains(i))
        .map(|(_, o)| o.clone())
        .collect();

    let mut warnings = Vec::new();
    let train_years: std::collections::BTreeSet<i32> = train.iter().map(|o| o.year).collect();
    let mut dropped_years: std::collections::BTreeSet<i32> = Default::default();
    for &i in &held {
        if !train_years.contains(&obs[i].year) {
            dropped_years.insert(obs[i].year);
        }
    }
    for y in &dropped_years {
        warnings.push(format!(
            "year {y} lost all training observations; dropped from the per-year breakdown"
        ));
    }

    let model = fit_map(&train, timelines, cfg)?;
    let nugget_var = 1.0 / model.tau_eps;

    // years emptied of training data may fall outside the refitted span
    let (first, last) = model.year_span();
    let predictable: Vec<usize> = held
        .iter()
        .copied()
        .filter(|&i| obs[i].year >= first && obs[i].year <= last)
        .collect();
    for &i in &held {
        if obs[i].year < first || obs[i].year > last {
            warnings.push(format!(
                "held-out point {} {} outside refitted span; skipped",
                obs[i].site_id, obs[i].year
            ));
        }
    }
    let pts: Vec<(crate::geo::PointKm, i32)> = predictable
        .iter()
        .map(|&i| (obs[i].location, obs[i].year))
        .collect();
    let preds = predict_points(&model, &pts)?;

    let mut rows = Vec::with_capacity(predictable.len());
    let mut outside = 0usize;
    let mut by_year: std::collections::BTreeMap<i32, (usize, usize)> = Default::default();
    let mut by_site: std::collections::BTreeMap<String, (usize, usize)> = Default::default();
    for (&i, &(mean, var_latent)) in predictable.iter().zip(&preds) {
        let o = &obs[i];
        let sd = (var_latent + nugget_var).sqrt();
        let std_residual = (o.z - mean) / sd;
        let outside_95 = std_residual.abs() > Z_95;
        if outside_95 {
            outside += 1;
        }
        if !dropped_years.contains(&o.year) {
            let e = by_year.entry(o.year).or_insert((0, 0));
            e.1 += 1;
            if outside_95 {
                e.0 += 1;
            }
        }
        let e = by_site.entry(o.site_id.clone()).or_insert((0, 0));
        e.1 += 1;
        if outside_95 {
            e.0 += 1;
        }
        rows.push(HoldoutRow {
            site_id: o.site_id.clone(),
            year: o.year,
            observed_z: o.z,
            predicted_mean: mean,
            predicted_sd: sd,
            std_residual,
            outside_95,
        });
    }
    let share = if rows.is_empty() {
        0.0
    } else {
        outside as f64 / rows.len() as f64
    };
    Ok(HoldoutReport {
        n_total: n,
        n_holdout,
        fraction,
        seed,
        share_outside_95: share,
        nominal_share: 0.05,
        reference_real_data_share: 0.35,
        rows,
        by_year: by_year.into_iter().map(|(y, (o, t))| (y, o, t)).collect(),
        by_site: by_site.into_iter().map(|(s, (o, t))| (s, o, t)).collect(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sim::{lattice_sites, simulate, SimSpec};
    use crate::model::TrendKind;

    fn sim(seed: u64) -> Vec<Observation> {
        simulate(
            &SimSpec {
                sites: lattice_sites(4, 3, 90.0, 70.0),
                years: (2000..2010).collect(),
                beta0: 0.1,
                trend: vec![],
                kappa: 1.0,
                range_km: 30.0,
                sigma_w: 0.35,
                a: 0.8,
                tau_eps: 50.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn single_point_holdout_has_one_row() {
        let obs = sim(1);
        let cfg = FitConfig {
            trend: TrendKind::None,
            ..Default::default()
        };
        // fraction small enough that exactly one point is held out
        let rep = validate_holdout(&obs, None, 0.005, 42, &cfg).unwrap();
        assert_eq!(rep.n_holdout, 1);
        assert_eq!(rep.rows.len(), 1);
    }

    #[test]
    fn holdout_is_deterministic() {
        let obs = sim(2);
        let cfg = FitConfig {
            trend: TrendKind::None,
            ..Default::default()
        };
        let a = validate_holdout(&obs, None, 0.1, 7, &cfg).unwrap();
        let b = validate_holdout(&obs, None, 0.1, 7, &cfg).unwrap();
        assert_eq!(a.share_outside_95, b.share_outside_95);
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.predicted_mean, y.predicted_mean);
        }
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let obs = sim(3);
        let cfg = FitConfig::default();
        assert!(validate_holdout(&obs, None, 0.0, 1, &cfg).is_err());
        assert!(validate_holdout(&obs, None, 0.7, 1, &cfg).is_err());
    }
}
