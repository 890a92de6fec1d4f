//! `psfield variogram`: per-year empirical variograms, weighted Matérn
//! fits and the cross-year quantile table.

use psfield::covariance::{
    empirical_variogram, fit_variogram, variogram_quantiles, DEFAULT_QUANTILE_PROBS,
};

use crate::config::{ResolvedPaths, RunConfig};
use crate::out::{fnum, write_csv};
use crate::CliError;

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let by_year = super::responses_by_year(&obs);

    let mut fitted = Vec::new();
    let mut param_rows = Vec::new();
    for (year, sites) in &by_year {
        if sites.len() < 4 {
            println!("{year}: skipped ({} usable sites, need 4)", sites.len());
            continue;
        }
        let ev = empirical_variogram(sites, cfg.variogram.n_bins, cfg.variogram.max_dist_km)?;
        let rows: Vec<String> = ev
            .bins
            .iter()
            .map(|b| {
                format!(
                    "{},{},{}",
                    fnum(b.dist_km),
                    fnum(b.semivariance),
                    b.n_pairs
                )
            })
            .collect();
        write_csv(
            &paths.variogram_dir().join(format!("variogram_{year}.csv")),
            "bin_center_km,semivariance,n_pairs",
            &rows,
        )?;
        match fit_variogram(&ev, cfg.variogram.kappa) {
            Ok(p) => {
                param_rows.push(format!(
                    "{},{},{},{}",
                    year,
                    fnum(p.nugget_var),
                    fnum(p.sigma * p.sigma),
                    fnum(p.range_km)
                ));
                fitted.push((*year, p));
            }
            Err(e) => println!("{year}: fit skipped ({e})"),
        }
    }
    if fitted.is_empty() {
        return Err(CliError::Lib(psfield::Error::NoData(
            "no year had enough sites for a variogram fit".into(),
        )));
    }
    write_csv(
        &paths.output_dir.join("variogram_params.csv"),
        "year,nugget,psill,range_km",
        &param_rows,
    )?;
    let json: Vec<serde_json::Value> = fitted
        .iter()
        .map(|(year, p)| {
            serde_json::json!({
                "year": year,
                "kappa": p.kappa,
                "nugget": p.nugget_var,
                "psill": p.sigma * p.sigma,
                "range_km": p.range_km,
            })
        })
        .collect();
    crate::out::write_file(
        &paths.output_dir.join("variogram_params.json"),
        &format!("{}\n", serde_json::to_string_pretty(&json)?),
    )?;

    let params: Vec<psfield::MaternParams> = fitted.iter().map(|&(_, p)| p).collect();
    let quantiles = variogram_quantiles(&params, &DEFAULT_QUANTILE_PROBS)?;
    let rows: Vec<String> = quantiles
        .iter()
        .map(|q| {
            format!(
                "{},{},{}",
                fnum(q.prob * 100.0),
                fnum(q.range_km),
                fnum(q.psill)
            )
        })
        .collect();
    write_csv(
        &paths.output_dir.join("variogram_quantiles.csv"),
        "quantile_pct,range_km,psill",
        &rows,
    )?;
    println!(
        "fitted {} yearly variograms; quantile table has {} rows",
        fitted.len(),
        quantiles.len()
    );
    Ok(())
}
