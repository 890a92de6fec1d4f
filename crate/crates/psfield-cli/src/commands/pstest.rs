//! `psfield pstest`: the preferential-sampling test per year, with
//! interpolation of short gaps and histogram data of the null statistics.

use psfield::pstest::{histogram, interpolate_missing, ps_test_series, PsSeriesEntry};
use serde::Serialize;

use crate::config::{ResolvedPaths, RunConfig};
use crate::out::{fnum, write_csv};
use crate::CliError;

#[derive(Serialize)]
struct PsTestOutput {
    k: usize,
    m: usize,
    seed: u64,
    n_min: usize,
    /// Yearly tests are computed independently although consecutive
    /// networks share most sites; treat series-level conclusions as
    /// qualitative.
    dependence_caveat: String,
    series: psfield::pstest::PsSeries,
}

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let polygon = super::load_polygon(cfg, paths)?;
    let surfaces = super::load_surfaces(paths, cfg.predict.grid_spacing_km)?;
    let data = super::responses_by_year(&obs);

    let ps = cfg.pstest.clone();
    let series = ps_test_series(&data, &surfaces, &polygon, ps.k, ps.m, ps.seed, ps.n_min);
    let series = interpolate_missing(&series);

    // per-year summary rows and null histograms
    let mut rows = Vec::new();
    for entry in &series.entries {
        match entry {
            PsSeriesEntry::Tested(r) => {
                rows.push(format!(
                    "{},{},{},{},{},{},tested",
                    r.year,
                    r.n_sites,
                    r.k,
                    fnum(r.rho_obs),
                    fnum(r.p_lower),
                    fnum(r.p_two_sided)
                ));
                let hist = histogram(&r.null_rhos, 30);
                let hist_rows: Vec<String> = hist
                    .iter()
                    .map(|&(lo, hi, c)| format!("{},{},{}", fnum(lo), fnum(hi), c))
                    .collect();
                write_csv(
                    &paths.output_dir.join(format!("pstest_hist_{}.csv", r.year)),
                    "bin_lo,bin_hi,count",
                    &hist_rows,
                )?;
            }
            PsSeriesEntry::Interpolated { year, rho, .. } => {
                rows.push(format!("{},,{},{},,,interpolated", year, ps.k, fnum(*rho)));
            }
            PsSeriesEntry::Skipped { year, n_sites, .. } => {
                rows.push(format!("{},{},{},,,,skipped", year, n_sites, ps.k));
            }
        }
    }
    write_csv(
        &paths.pstest_csv(),
        "year,n_sites,k,rho,p_lower,p_two_sided,status",
        &rows,
    )?;

    let mut json_series = series.clone();
    if !ps.include_null_rhos {
        for e in &mut json_series.entries {
            if let PsSeriesEntry::Tested(r) = e {
                r.null_rhos.clear();
            }
        }
    }
    let output = PsTestOutput {
        k: ps.k,
        m: ps.m,
        seed: ps.seed,
        n_min: ps.n_min,
        dependence_caveat: "yearly tests assume independence between years; consecutive \
                            networks share most sites, so read the series qualitatively"
            .into(),
        series: json_series,
    };
    crate::out::write_file(
        &paths.pstest_json(),
        &format!("{}\n", serde_json::to_string_pretty(&output)?),
    )?;

    // multi-k scan with a Bonferroni column over the scanned set
    if !ps.k_scan.is_empty() {
        let mut ks: Vec<usize> = ps.k_scan.clone();
        if !ks.contains(&ps.k) {
            ks.push(ps.k);
        }
        ks.sort_unstable();
        ks.dedup();
        let n_tests = ks.len() as f64;
        let mut scan_rows = Vec::new();
        for &k in &ks {
            let s = ps_test_series(&data, &surfaces, &polygon, k, ps.m, ps.seed, ps.n_min);
            for entry in &s.entries {
                if let PsSeriesEntry::Tested(r) = entry {
                    scan_rows.push(format!(
                        "{},{},{},{},{}",
                        r.year,
                        k,
                        fnum(r.rho_obs),
                        fnum(r.p_lower),
                        fnum((r.p_lower * n_tests).min(1.0))
                    ));
                }
            }
        }
        write_csv(
            &paths.output_dir.join("pstest_kscan.csv"),
            "year,k,rho,p_lower,p_bonferroni",
            &scan_rows,
        )?;
    }

    for entry in &series.entries {
        match entry {
            PsSeriesEntry::Tested(r) => println!(
                "{}: n={} rho={} p_lower={} p_two_sided={}",
                r.year,
                r.n_sites,
                fnum(r.rho_obs),
                fnum(r.p_lower),
                fnum(r.p_two_sided)
            ),
            PsSeriesEntry::Interpolated {
                year,
                rho,
                left_year,
                right_year,
                ..
            } => println!(
                "{year}: interpolated rho={} (mean of {left_year} and {right_year})",
                fnum(*rho)
            ),
            PsSeriesEntry::Skipped { year, reason, .. } => {
                println!("{year}: skipped ({reason})")
            }
        }
    }
    println!("wrote {}", paths.pstest_json().display());
    Ok(())
}
