//! `psfield ingest`: raw annual CSVs to the canonical observations file,
//! site timelines and a per-year summary.

use psfield::ingest::{
    aggregate_pocs, build_timelines, classify_retention, filter_rows, log_normalize,
    parse_annual_csv, parse_site_metadata, yearly_summary, BaselineSpec, FilterConfig,
};

use crate::config::{BaselineCfg, ResolvedPaths, RunConfig};
use crate::out::{fnum, write_csv};
use crate::CliError;

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let albers = super::load_albers(cfg)?;
    let polygon = super::load_polygon(cfg, paths)?;

    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&paths.data_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Lib(psfield::Error::NoData(format!(
            "no input files: {} holds no .csv",
            paths.data_dir.display()
        ))));
    }

    let mut rows = Vec::new();
    for path in &files {
        let file = std::fs::File::open(path)?;
        rows.extend(parse_annual_csv(file, &path.display().to_string())?);
    }
    println!("parsed {} rows from {} files", rows.len(), files.len());

    let kept = filter_rows(
        rows,
        &FilterConfig {
            parameter_code: &cfg.data.parameter_code,
            start_year: cfg.data.start_year,
            end_year: cfg.data.end_year,
            albers: &albers,
            polygon: &polygon,
        },
    )?;
    let mut obs = aggregate_pocs(&kept, &albers)?;
    let baseline_spec = match &cfg.data.baseline {
        BaselineCfg::Value(v) => BaselineSpec::Supplied(*v),
        BaselineCfg::Mode(_) => BaselineSpec::ComputedFromStartYear(cfg.data.start_year),
    };
    let baseline = log_normalize(&mut obs, baseline_spec)?;
    println!(
        "baseline {} ({})",
        fnum(baseline.value),
        match baseline.source {
            psfield::ingest::BaselineSource::ComputedFromStartYear => "start-year mean",
            psfield::ingest::BaselineSource::Supplied => "supplied",
        }
    );

    let metadata = match &paths.site_metadata {
        Some(p) => {
            let file = std::fs::File::open(p)?;
            Some(parse_site_metadata(file, &p.display().to_string())?)
        }
        None => None,
    };
    let mut timelines = build_timelines(&obs, metadata.as_deref());
    classify_retention(&mut timelines, cfg.data.start_year, cfg.data.end_year)?;

    let mut buf = Vec::new();
    psfield::ingest::write_observations(&mut buf, &obs)?;
    crate::out::write_file(&paths.observations(), &String::from_utf8_lossy(&buf))?;
    super::write_timelines(paths, &timelines)?;

    let summary = yearly_summary(&obs)?;
    let rows: Vec<String> = summary
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{}",
                s.year,
                s.n,
                fnum(s.mean_z),
                fnum(s.q1),
                fnum(s.median),
                fnum(s.q3)
            )
        })
        .collect();
    write_csv(
        &paths.yearly_summary(),
        "year,n_sites,mean_z,q1,median,q3",
        &rows,
    )?;

    for s in &summary {
        println!("{}: {} observations", s.year, s.n);
    }
    println!(
        "wrote {} observations for {} sites to {}",
        obs.len(),
        timelines.len(),
        paths.observations().display()
    );
    Ok(())
}
