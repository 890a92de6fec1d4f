//! `psfield report`: one human-readable digest over every stage output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use psfield::ingest::{Retention, SiteTimeline};
use psfield::model::{fit_trend_regression, FittedModel, HoldoutReport};
use psfield::pstest::{acf_pacf, correlate_site_changes, PsSeries, PsSeriesEntry};
use serde::Deserialize;

use crate::config::{ResolvedPaths, RunConfig};
use crate::CliError;

#[derive(Deserialize)]
struct PsTestInput {
    k: usize,
    m: usize,
    seed: u64,
    dependence_caveat: String,
    series: PsSeries,
}

/// Sites appearing (resp. disappearing) relative to the previous year.
fn site_changes(
    timelines: &[SiteTimeline],
    start_year: i32,
    end_year: i32,
) -> (Vec<(i32, usize)>, Vec<(i32, usize)>) {
    let mut additions = Vec::new();
    let mut removals = Vec::new();
    for year in start_year..=end_year {
        let mut added = 0;
        let mut removed = 0;
        if year > start_year {
            for t in timelines {
                let now = t.years_active.contains(&year);
                let before = t.years_active.contains(&(year - 1));
                if now && !before {
                    added += 1;
                }
                if before && !now {
                    removed += 1;
                }
            }
        }
        additions.push((year, added));
        removals.push((year, removed));
    }
    (additions, removals)
}

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let timelines = super::load_timelines(paths)?;

    super::require_upstream(&paths.model(), "fit")?;
    let model = FittedModel::from_json(&std::fs::read_to_string(paths.model())?)?;

    super::require_upstream(&paths.validation_json(), "validate")?;
    let validation: HoldoutReport =
        serde_json::from_str(&std::fs::read_to_string(paths.validation_json())?)
            .map_err(psfield::Error::from)?;

    super::require_upstream(&paths.pstest_json(), "pstest")?;
    let pstest: PsTestInput =
        serde_json::from_str(&std::fs::read_to_string(paths.pstest_json())?)
            .map_err(psfield::Error::from)?;

    let mut r = String::new();
    let _ = writeln!(r, "psfield pipeline report");
    let _ = writeln!(r, "=======================");
    let _ = writeln!(r);

    // data inventory
    let years: Vec<i32> = {
        let mut ys: Vec<i32> = obs.iter().map(|o| o.year).collect();
        ys.sort_unstable();
        ys.dedup();
        ys
    };
    let _ = writeln!(
        r,
        "Data: {} observations, {} sites, years {}..{}",
        obs.len(),
        timelines.len(),
        years.first().unwrap(),
        years.last().unwrap()
    );
    let _ = writeln!(r);

    // retention table
    let _ = writeln!(
        r,
        "Site retention ({}..{})",
        cfg.data.start_year, cfg.data.end_year
    );
    for cat in [
        Retention::Continuous,
        Retention::Added,
        Retention::Removed,
        Retention::AddedThenRemoved,
    ] {
        let n = timelines.iter().filter(|t| t.retention == Some(cat)).count();
        let _ = writeln!(r, "  {:<20} {n}", cat.label());
    }
    let _ = writeln!(r);

    // yearly trend regressions on the mean z per year
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for o in &obs {
        by_year.entry(o.year).or_default().push(o.z);
    }
    let series: Vec<(i32, f64)> = by_year
        .iter()
        .map(|(y, zs)| (*y, zs.iter().sum::<f64>() / zs.len() as f64))
        .collect();
    let _ = writeln!(r, "Yearly mean trend regressions");
    if series.len() >= 4 {
        let lin = fit_trend_regression(&series, 1)?;
        let _ = writeln!(
            r,
            "  linear:    slope {:.4} per year, adj R2 {:.4}",
            lin.coefficients[1], lin.adj_r_squared
        );
        let quad = fit_trend_regression(&series, 2)?;
        let (f, p) = quad.f_vs_linear.expect("order 2");
        let _ = writeln!(
            r,
            "  quadratic: curvature {:.6}, adj R2 {:.4}, F vs linear {:.4} (p {:.4})",
            quad.coefficients[2], quad.adj_r_squared, f, p
        );
    } else {
        let _ = writeln!(r, "  skipped: fewer than 4 years");
    }
    let _ = writeln!(r);

    // fitted model
    let _ = writeln!(
        r,
        "Fitted model (MAP / empirical Bayes; uncertainty is conditional on the fitted hyperparameters)"
    );
    let _ = writeln!(r, "  trend {} (ar1 {})", model.trend_kind, model.ar1);
    let _ = writeln!(r, "  intercept            {:.6}", model.beta0);
    for (name, v) in &model.fixed_effects {
        let _ = writeln!(r, "  {:<20} {:.6}", name, v);
    }
    let _ = writeln!(r, "  matern range (km)    {:.4}", model.spatial.range_km);
    let _ = writeln!(r, "  marginal sd          {:.6}", model.spatial.sigma);
    let _ = writeln!(r, "  sigma_w              {:.6}", model.sigma_w);
    let _ = writeln!(r, "  ar1 coefficient      {:.6}", model.a);
    let _ = writeln!(r, "  noise precision      {:.4}", model.tau_eps);
    if let Some(tau) = model.tau_rw {
        let _ = writeln!(r, "  rw precision         {:.4}", tau);
    }
    let _ = writeln!(r, "  log-likelihood       {:.4}", model.loglik);
    let _ = writeln!(r, "  map objective        {:.4}", model.objective);
    let _ = writeln!(r);

    // holdout coverage
    let _ = writeln!(r, "Holdout validation");
    let _ = writeln!(
        r,
        "  held out {} of {} (fraction {:.3}, seed {})",
        validation.n_holdout, validation.n_total, validation.fraction, validation.seed
    );
    let _ = writeln!(
        r,
        "  share outside central 95%: {:.4} (nominal {:.2}, real-data reference {:.2})",
        validation.share_outside_95, validation.nominal_share, validation.reference_real_data_share
    );
    for w in &validation.warnings {
        let _ = writeln!(r, "  warning: {w}");
    }
    let _ = writeln!(r);

    // preferential-sampling series
    let _ = writeln!(
        r,
        "Preferential-sampling test (k = {}, m = {}, seed = {})",
        pstest.k, pstest.m, pstest.seed
    );
    for e in &pstest.series.entries {
        match e {
            PsSeriesEntry::Tested(t) => {
                let _ = writeln!(
                    r,
                    "  {}: n={:<3} rho {:+.4}  p_lower {:.4}  p_two_sided {:.4}",
                    t.year, t.n_sites, t.rho_obs, t.p_lower, t.p_two_sided
                );
            }
            PsSeriesEntry::Interpolated {
                year,
                rho,
                left_year,
                right_year,
                ..
            } => {
                let _ = writeln!(
                    r,
                    "  {year}: rho {rho:+.4} [interpolated: mean of {left_year} and {right_year}]"
                );
            }
            PsSeriesEntry::Skipped { year, n_sites, reason } => {
                let _ = writeln!(r, "  {year}: skipped (n={n_sites}; {reason})");
            }
        }
    }
    let _ = writeln!(r, "  note: {}", pstest.dependence_caveat);
    let _ = writeln!(r);

    // series diagnostics
    let rho_series = pstest.series.rho_series(true);
    if rho_series.len() >= 6 {
        let values: Vec<f64> = rho_series.iter().map(|&(_, v)| v).collect();
        let max_lag = (values.len() / 2).min(10);
        let diag = acf_pacf(&values, max_lag, 0.95)?;
        let _ = writeln!(
            r,
            "Rho-series diagnostics (interpolated years included; 95% band +-{:.4})",
            diag.band
        );
        let acf_str: Vec<String> = diag.acf[1..].iter().map(|v| format!("{v:+.3}")).collect();
        let pacf_str: Vec<String> = diag.pacf.iter().map(|v| format!("{v:+.3}")).collect();
        let _ = writeln!(r, "  acf  1..{}: {}", max_lag, acf_str.join(" "));
        let _ = writeln!(r, "  pacf 1..{}: {}", max_lag, pacf_str.join(" "));
        let _ = writeln!(r);
    }

    // correlation of the series with network changes
    let (additions, removals) = site_changes(&timelines, cfg.data.start_year, cfg.data.end_year);
    let _ = writeln!(r, "Correlation of test rho with site changes");
    for use_interp in [true, false] {
        match correlate_site_changes(&pstest.series, &additions, &removals, use_interp) {
            Ok(c) => {
                let label = if use_interp {
                    "interpolated included"
                } else {
                    "interpolated excluded"
                };
                let fmt = |v: &Result<f64, String>| match v {
                    Ok(x) => format!("{x:+.4}"),
                    Err(e) => format!("n/a ({e})"),
                };
                let _ = writeln!(
                    r,
                    "  {label} ({} years): additions {}, removals {}",
                    c.n_years,
                    fmt(&c.additions),
                    fmt(&c.removals)
                );
            }
            Err(e) => {
                let _ = writeln!(r, "  unavailable: {e}");
            }
        }
    }

    crate::out::write_file(&paths.report(), &r)?;
    print!("{r}");
    println!("wrote {}", paths.report().display());
    Ok(())
}
