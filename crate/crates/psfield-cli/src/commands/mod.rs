//! Pipeline commands. Each stage reads files written by its predecessors,
//! so a missing input names the command that produces it.

pub mod fit;
pub mod ingest;
pub mod predict;
pub mod pstest;
pub mod report;
pub mod validate;
pub mod variogram;

use std::path::Path;

use psfield::geo::{Albers, PointKm, Polygon};
use psfield::ingest::{Observation, Retention, SiteTimeline};
use psfield::model::{FittedModel, PredictionSurface};

use crate::config::{ResolvedPaths, RunConfig};
use crate::out::fnum;
use crate::CliError;

pub fn require_upstream(path: &Path, producer: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Lib(psfield::Error::NoData(format!(
            "{} is missing; run `psfield {producer}` first",
            path.display()
        ))))
    }
}

pub fn load_albers(cfg: &RunConfig) -> Result<Albers, CliError> {
    let spec = cfg.projection.to_spec()?;
    Ok(Albers::new(spec)?)
}

pub fn load_polygon(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<Polygon, CliError> {
    let albers = load_albers(cfg)?;
    let doc = std::fs::read_to_string(&paths.polygon)?;
    Ok(psfield::geo::polygon_from_geojson(&doc, &albers)?)
}

pub fn load_observations(paths: &ResolvedPaths) -> Result<Vec<Observation>, CliError> {
    let path = paths.observations();
    require_upstream(&path, "ingest")?;
    let file = std::fs::File::open(&path)?;
    Ok(psfield::ingest::read_observations(
        file,
        &path.display().to_string(),
    )?)
}

pub fn load_model(paths: &ResolvedPaths, obs: &[Observation]) -> Result<FittedModel, CliError> {
    let path = paths.model();
    require_upstream(&path, "fit")?;
    let doc = std::fs::read_to_string(&path)?;
    let mut model = FittedModel::from_json(&doc)?;
    let timelines = if model
        .fixed_effects
        .iter()
        .any(|(n, _)| n.starts_with("retention"))
    {
        Some(load_timelines(paths)?)
    } else {
        None
    };
    model.attach_data(obs, timelines.as_deref())?;
    Ok(model)
}

const TIMELINE_HEADER: &str =
    "site_id,retention,first_year,last_year,n_years,years,land_use,location_setting,monitoring_objective";

pub fn timeline_rows(timelines: &[SiteTimeline]) -> Vec<String> {
    let mut sorted: Vec<&SiteTimeline> = timelines.iter().collect();
    sorted.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    sorted
        .iter()
        .map(|t| {
            let years: Vec<String> = t.years_active.iter().map(|y| y.to_string()).collect();
            format!(
                "{},{},{},{},{},{},{},{},{}",
                t.site_id,
                t.retention.map(|r| r.label()).unwrap_or(""),
                t.years_active.first().map(|y| y.to_string()).unwrap_or_default(),
                t.years_active.last().map(|y| y.to_string()).unwrap_or_default(),
                t.years_active.len(),
                years.join(";"),
                t.land_use.as_deref().unwrap_or(""),
                t.location_setting.as_deref().unwrap_or(""),
                t.monitoring_objective.as_deref().unwrap_or(""),
            )
        })
        .collect()
}

pub fn write_timelines(paths: &ResolvedPaths, timelines: &[SiteTimeline]) -> Result<(), CliError> {
    crate::out::write_csv(&paths.timelines(), TIMELINE_HEADER, &timeline_rows(timelines))
}

pub fn load_timelines(paths: &ResolvedPaths) -> Result<Vec<SiteTimeline>, CliError> {
    let path = paths.timelines();
    require_upstream(&path, "ingest")?;
    let file = std::fs::File::open(&path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(file);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(psfield::Error::from)?;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        let retention = match record.get(1).unwrap_or("") {
            "continuous" => Some(Retention::Continuous),
            "removed" => Some(Retention::Removed),
            "added" => Some(Retention::Added),
            "added-then-removed" => Some(Retention::AddedThenRemoved),
            _ => None,
        };
        let years_active: Vec<i32> = record
            .get(5)
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect();
        let opt = |s: String| if s.is_empty() { None } else { Some(s) };
        out.push(SiteTimeline {
            site_id: get(0),
            years_active,
            retention,
            land_use: opt(get(6)),
            location_setting: opt(get(7)),
            monitoring_objective: opt(get(8)),
        });
    }
    if out.is_empty() {
        return Err(CliError::Lib(psfield::Error::NoData(format!(
            "{}: no timelines",
            path.display()
        ))));
    }
    Ok(out)
}

const SURFACE_HEADER: &str = "x_km,y_km,year,mean,sd";

pub fn surface_path(paths: &ResolvedPaths, year: i32) -> std::path::PathBuf {
    paths.surfaces_dir().join(format!("surface_{year}.csv"))
}

pub fn write_surface(paths: &ResolvedPaths, s: &PredictionSurface) -> Result<(), CliError> {
    let rows: Vec<String> = s
        .points
        .iter()
        .zip(s.mean.iter().zip(&s.sd))
        .map(|(p, (m, sd))| {
            format!(
                "{},{},{},{},{}",
                fnum(p.x),
                fnum(p.y),
                s.year,
                fnum(*m),
                fnum(*sd)
            )
        })
        .collect();
    crate::out::write_csv(&surface_path(paths, s.year), SURFACE_HEADER, &rows)
}

pub fn load_surfaces(
    paths: &ResolvedPaths,
    spacing_km: f64,
) -> Result<Vec<PredictionSurface>, CliError> {
    let dir = paths.surfaces_dir();
    require_upstream(&dir, "predict")?;
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("surface_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Lib(psfield::Error::NoData(format!(
            "{} holds no surface files; run `psfield predict` first",
            dir.display()
        ))));
    }
    let mut out = Vec::new();
    for path in files {
        let file = std::fs::File::open(&path)?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(file);
        let mut points = Vec::new();
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        let mut year: Option<i32> = None;
        for record in rdr.records() {
            let record = record.map_err(psfield::Error::from)?;
            let parse = |i: usize| -> Result<f64, CliError> {
                record
                    .get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| {
                        CliError::Lib(psfield::Error::NoData(format!(
                            "{}: bad numeric field",
                            path.display()
                        )))
                    })
            };
            points.push(PointKm::new(parse(0)?, parse(1)?));
            year = Some(parse(2)? as i32);
            mean.push(parse(3)?);
            sd.push(parse(4)?);
        }
        let year = year.ok_or_else(|| {
            CliError::Lib(psfield::Error::NoData(format!(
                "{}: empty surface",
                path.display()
            )))
        })?;
        out.push(PredictionSurface::new(year, spacing_km, points, mean, sd)?);
    }
    Ok(out)
}

/// Observations grouped per year as (location, z) pairs, year-sorted.
pub fn responses_by_year(obs: &[Observation]) -> Vec<(i32, Vec<(PointKm, f64)>)> {
    let mut map: std::collections::BTreeMap<i32, Vec<(PointKm, f64)>> = Default::default();
    for o in obs {
        map.entry(o.year).or_default().push((o.location, o.z));
    }
    map.into_iter().collect()
}
