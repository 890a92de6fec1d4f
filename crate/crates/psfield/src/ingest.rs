//! Ingestion of annual pollutant summaries: CSV parsing, pollutant and
//! event-variant filtering, instrument (POC) aggregation to one observation
//! per site-year, log-normalization against a baseline year, and site
//! retention history.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{contains, Albers, GeoPoint, PointKm, Polygon};
use crate::stats;

/// One line of an annual summary file: a year of data from one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub state_code: String,
    pub county_code: String,
    pub site_number: String,
    pub parameter_code: String,
    pub poc: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub datum: String,
    pub year: i32,
    pub arithmetic_mean: f64,
    pub event_type: String,
    pub observation_count: u64,
    pub sample_duration: String,
    pub metric_used: String,
}

impl RawRow {
    /// Composite site key `state-county-site`.
    pub fn site_id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.state_code, self.county_code, self.site_number
        )
    }
}

/// One aggregated observation: a site-year after POC averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub site_id: String,
    pub location: PointKm,
    pub year: i32,
    /// Raw concentration, micrograms per cubic metre.
    pub pm_mean: f64,
    /// Log-normalized value `ln(pm_mean / baseline)`; filled by
    /// [`log_normalize`].
    pub z: f64,
}

/// Where the network kept a site over the study period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Retention {
    /// Active in both the start and the end year.
    Continuous,
    /// Active at the start, gone by the end.
    Removed,
    /// Absent at the start, active at the end.
    Added,
    /// Joined after the start and gone before the end.
    AddedThenRemoved,
}

impl Retention {
    pub fn label(&self) -> &'static str {
        match self {
            Retention::Continuous => "continuous",
            Retention::Removed => "removed",
            Retention::Added => "added",
            Retention::AddedThenRemoved => "added-then-removed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTimeline {
    pub site_id: String,
    pub years_active: Vec<i32>,
    pub retention: Option<Retention>,
    pub land_use: Option<String>,
    pub location_setting: Option<String>,
    pub monitoring_objective: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineSource {
    ComputedFromStartYear,
    Supplied,
}

/// Normalization constant for the log transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub source: BaselineSource,
}

/// Per-site descriptive labels from the site metadata file.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMetadata {
    pub site_id: String,
    pub land_use: Option<String>,
    pub location_setting: Option<String>,
    pub monitoring_objective: Option<String>,
}

fn header_index(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn require_column(
    headers: &csv::StringRecord,
    names: &[&str],
    file: &str,
) -> Result<usize> {
    header_index(headers, names).ok_or_else(|| Error::Schema {
        file: file.to_string(),
        msg: format!("missing required column {:?}", names[0]),
    })
}

/// Parse an annual summary CSV. Columns are located by header name;
/// unknown extra columns are ignored. Numeric fields that fail to parse
/// are reported with their line number.
pub fn parse_annual_csv<R: Read>(reader: R, file_label: &str) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|_| Error::Schema {
            file: file_label.to_string(),
            msg: "cannot read header row".into(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema {
            file: file_label.to_string(),
            msg: "empty file".into(),
        });
    }
    let col_state = require_column(&headers, &["State Code", "State Number"], file_label)?;
    let col_county = require_column(&headers, &["County Code", "County Number"], file_label)?;
    let col_site = require_column(&headers, &["Site Num", "Site Number"], file_label)?;
    let col_param = require_column(&headers, &["Parameter Code"], file_label)?;
    let col_poc = require_column(&headers, &["POC"], file_label)?;
    let col_lat = require_column(&headers, &["Latitude"], file_label)?;
    let col_lon = require_column(&headers, &["Longitude"], file_label)?;
    let col_datum = require_column(&headers, &["Datum"], file_label)?;
    let col_year = require_column(&headers, &["Year"], file_label)?;
    let col_mean = require_column(&headers, &["Arithmetic Mean"], file_label)?;
    let col_event = require_column(&headers, &["Event Type"], file_label)?;
    let col_obs_count = header_index(&headers, &["Observation Count"]);
    let col_duration = header_index(&headers, &["Sample Duration"]);
    let col_metric = header_index(&headers, &["Metric Used"]);

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rows.len() as u64 + 2);
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let parse_f64 = |i: usize, what: &str| -> Result<f64> {
            record
                .get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    file: file_label.to_string(),
                    line,
                    msg: format!("{what} is not numeric: {:?}", record.get(i).unwrap_or("")),
                })
        };
        let state_code = field(col_state);
        let county_code = field(col_county);
        let site_number = field(col_site);
        if state_code.is_empty() || county_code.is_empty() || site_number.is_empty() {
            return Err(Error::Parse {
                file: file_label.to_string(),
                line,
                msg: "empty site identifier".into(),
            });
        }
        let year = record
            .get(col_year)
            .unwrap_or("")
            .parse::<i32>()
            .map_err(|_| Error::Parse {
                file: file_label.to_string(),
                line,
                msg: format!("year is not an integer: {:?}", record.get(col_year)),
            })?;
        if !(1900..=2100).contains(&year) {
            return Err(Error::Parse {
                file: file_label.to_string(),
                line,
                msg: format!("year {year} outside [1900, 2100]"),
            });
        }
        let arithmetic_mean = parse_f64(col_mean, "Arithmetic Mean")?;
        if arithmetic_mean < 0.0 {
            return Err(Error::Parse {
                file: file_label.to_string(),
                line,
                msg: format!("negative Arithmetic Mean {arithmetic_mean}"),
            });
        }
        let poc = record
            .get(col_poc)
            .unwrap_or("")
            .parse::<u32>()
            .map_err(|_| Error::Parse {
                file: file_label.to_string(),
                line,
                msg: format!("POC is not an integer: {:?}", record.get(col_poc)),
            })?;
        let observation_count = match col_obs_count {
            Some(i) => record.get(i).unwrap_or("").parse::<u64>().unwrap_or(0),
            None => 0,
        };
        rows.push(RawRow {
            state_code,
            county_code,
            site_number,
            parameter_code: field(col_param),
            poc,
            latitude: parse_f64(col_lat, "Latitude")?,
            longitude: parse_f64(col_lon, "Longitude")?,
            datum: field(col_datum),
            year,
            arithmetic_mean,
            event_type: field(col_event),
            observation_count,
            sample_duration: col_duration.map(field).unwrap_or_default(),
            metric_used: col_metric.map(field).unwrap_or_default(),
        });
    }
    if rows.is_empty() {
        return Err(Error::NoData(format!("{file_label}: no data rows")));
    }
    Ok(rows)
}

/// Parse the site metadata CSV (one or more rows per site; the first
/// non-empty label wins).
pub fn parse_site_metadata<R: Read>(reader: R, file_label: &str) -> Result<Vec<SiteMetadata>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|_| Error::Schema {
            file: file_label.to_string(),
            msg: "cannot read header row".into(),
        })?
        .clone();
    let col_state = require_column(&headers, &["State Code", "State Number"], file_label)?;
    let col_county = require_column(&headers, &["County Code", "County Number"], file_label)?;
    let col_site = require_column(&headers, &["Site Number", "Site Num"], file_label)?;
    let col_land = header_index(&headers, &["Land Use"]);
    let col_setting = header_index(&headers, &["Location Setting"]);
    let col_objective = header_index(&headers, &["Monitoring Objective"]);

    let mut by_site: BTreeMap<String, SiteMetadata> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let site_id = format!(
            "{}-{}-{}",
            record.get(col_state).unwrap_or(""),
            record.get(col_county).unwrap_or(""),
            record.get(col_site).unwrap_or("")
        );
        let get_opt = |i: Option<usize>| -> Option<String> {
            i.and_then(|i| record.get(i))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
        };
        let entry = by_site.entry(site_id.clone()).or_insert(SiteMetadata {
            site_id,
            land_use: None,
            location_setting: None,
            monitoring_objective: None,
        });
        if entry.land_use.is_none() {
            entry.land_use = get_opt(col_land);
        }
        if entry.location_setting.is_none() {
            entry.location_setting = get_opt(col_setting);
        }
        if entry.monitoring_objective.is_none() {
            entry.monitoring_objective = get_opt(col_objective);
        }
    }
    Ok(by_site.into_values().collect())
}

/// Filter policy for raw rows.
pub struct FilterConfig<'a> {
    pub parameter_code: &'a str,
    pub start_year: i32,
    pub end_year: i32,
    pub albers: &'a Albers,
    pub polygon: &'a Polygon,
}

fn event_rank(event_type: &str) -> u8 {
    match event_type {
        "Events Excluded" => 0,
        "Concurred Events Excluded" => 1,
        "No Events" => 2,
        "Events Included" => 3,
        _ => 4,
    }
}

/// Keep the configured pollutant and year span, resolve event-type
/// variants (the events-excluded row wins), deduplicate (site, year, POC)
/// and drop sites outside the basin polygon.
pub fn filter_rows(rows: Vec<RawRow>, cfg: &FilterConfig) -> Result<Vec<RawRow>> {
    let mut groups: BTreeMap<(String, i32, u32), RawRow> = BTreeMap::new();
    for row in rows {
        if row.parameter_code != cfg.parameter_code {
            continue;
        }
        if row.year < cfg.start_year || row.year > cfg.end_year {
            continue;
        }
        let key = (row.site_id(), row.year, row.poc);
        match groups.get(&key) {
            None => {
                groups.insert(key, row);
            }
            Some(existing) => {
                let (new_rank, old_rank) = (event_rank(&row.event_type), event_rank(&existing.event_type));
                let replace = new_rank < old_rank
                    || (new_rank == old_rank
                        && row.observation_count > existing.observation_count);
                if replace {
                    groups.insert(key, row);
                }
            }
        }
    }
    let mut kept = Vec::new();
    for row in groups.into_values() {
        let p = cfg.albers.project(GeoPoint {
            lon: row.longitude,
            lat: row.latitude,
        })?;
        if contains(cfg.polygon, p) {
            kept.push(row);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoData(
            "zero rows left after pollutant/year/polygon filtering".into(),
        ));
    }
    Ok(kept)
}

/// Average the distinct instruments of each site-year into one observation.
///
/// The site location comes from its most recent metadata row; rows whose
/// coordinates drift more than 1 km from it are an error.
pub fn aggregate_pocs(rows: &[RawRow], albers: &Albers) -> Result<Vec<Observation>> {
    // most recent coordinates per site
    let mut site_coord: BTreeMap<String, (i32, u32, GeoPoint)> = BTreeMap::new();
    for row in rows {
        let id = row.site_id();
        let candidate = (
            row.year,
            row.poc,
            GeoPoint {
                lon: row.longitude,
                lat: row.latitude,
            },
        );
        match site_coord.get(&id) {
            Some(&(y, p, _)) if (y, p) >= (row.year, row.poc) => {}
            _ => {
                site_coord.insert(id, candidate);
            }
        }
    }
    let mut site_loc: BTreeMap<String, PointKm> = BTreeMap::new();
    for (id, (_, _, g)) in &site_coord {
        site_loc.insert(id.clone(), albers.project(*g)?);
    }
    // drift check against the chosen location
    for row in rows {
        let id = row.site_id();
        let loc = site_loc[&id];
        let p = albers.project(GeoPoint {
            lon: row.longitude,
            lat: row.latitude,
        })?;
        let d = loc.dist(&p);
        if d > 1.0 {
            return Err(Error::InconsistentCoordinates {
                site: id,
                dist_km: d,
            });
        }
    }

    let mut groups: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.site_id(), row.year))
            .or_default()
            .push(row.arithmetic_mean);
    }
    Ok(groups
        .into_iter()
        .map(|((site_id, year), means)| Observation {
            location: site_loc[&site_id],
            site_id,
            year,
            pm_mean: stats::mean(&means),
            z: 0.0,
        })
        .collect())
}

/// How the normalization baseline is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSpec {
    /// Mean of all observations in the given start year.
    ComputedFromStartYear(i32),
    Supplied(f64),
}

/// Set `z = ln(pm_mean / baseline)` on every observation.
pub fn log_normalize(obs: &mut [Observation], spec: BaselineSpec) -> Result<Baseline> {
    let baseline = match spec {
        BaselineSpec::Supplied(v) => {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("baseline must be positive: {v}")));
            }
            Baseline {
                value: v,
                source: BaselineSource::Supplied,
            }
        }
        BaselineSpec::ComputedFromStartYear(year) => {
            let first: Vec<f64> = obs
                .iter()
                .filter(|o| o.year == year)
                .map(|o| o.pm_mean)
                .collect();
            if first.is_empty() {
                return Err(Error::NoData(format!(
                    "no observations in baseline year {year}"
                )));
            }
            Baseline {
                value: stats::mean(&first),
                source: BaselineSource::ComputedFromStartYear,
            }
        }
    };
    for o in obs.iter_mut() {
        if !(o.pm_mean > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive concentration {} at {} {}",
                o.pm_mean, o.site_id, o.year
            )));
        }
        o.z = (o.pm_mean / baseline.value).ln();
    }
    Ok(baseline)
}

/// Build per-site timelines from aggregated observations, joining optional
/// metadata labels.
pub fn build_timelines(
    obs: &[Observation],
    metadata: Option<&[SiteMetadata]>,
) -> Vec<SiteTimeline> {
    let mut years: BTreeMap<String, BTreeSet<i32>> = BTreeMap::new();
    for o in obs {
        years.entry(o.site_id.clone()).or_default().insert(o.year);
    }
    let meta: BTreeMap<&str, &SiteMetadata> = metadata
        .unwrap_or(&[])
        .iter()
        .map(|m| (m.site_id.as_str(), m))
        .collect();
    years
        .into_iter()
        .map(|(site_id, ys)| {
            let m = meta.get(site_id.as_str());
            SiteTimeline {
                years_active: ys.into_iter().collect(),
                retention: None,
                land_use: m.and_then(|m| m.land_use.clone()),
                location_setting: m.and_then(|m| m.location_setting.clone()),
                monitoring_objective: m.and_then(|m| m.monitoring_objective.clone()),
                site_id,
            }
        })
        .collect()
}

/// Assign the 2x2 retention category from presence in the start and end
/// years.
pub fn classify_retention(
    timelines: &mut [SiteTimeline],
    start_year: i32,
    end_year: i32,
) -> Result<()> {
    for tl in timelines.iter_mut() {
        if tl.years_active.is_empty() {
            return Err(Error::InsufficientData(format!(
                "site {} has no active years",
                tl.site_id
            )));
        }
        let at_start = tl.years_active.contains(&start_year);
        let at_end = tl.years_active.contains(&end_year);
        tl.retention = Some(match (at_start, at_end) {
            (true, true) => Retention::Continuous,
            (true, false) => Retention::Removed,
            (false, true) => Retention::Added,
            (false, false) => Retention::AddedThenRemoved,
        });
    }
    Ok(())
}

/// Per-year summary of the normalized values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: i32,
    pub n: usize,
    pub mean_z: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn yearly_summary(obs: &[Observation]) -> Result<Vec<YearSummary>> {
    if obs.is_empty() {
        return Err(Error::NoData("no observations to summarize".into()));
    }
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for o in obs {
        by_year.entry(o.year).or_default().push(o.z);
    }
    Ok(by_year
        .into_iter()
        .map(|(year, mut zs)| {
            zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            YearSummary {
                year,
                n: zs.len(),
                mean_z: stats::mean(&zs),
                q1: stats::quantile_sorted(&zs, 0.25),
                median: stats::quantile_sorted(&zs, 0.5),
                q3: stats::quantile_sorted(&zs, 0.75),
            }
        })
        .collect())
}

/// Write the canonical observations file: `site_id,x_km,y_km,year,pm_mean,z`
/// sorted by site and year, full float precision.
pub fn write_observations<W: std::io::Write>(writer: W, obs: &[Observation]) -> Result<()> {
    let mut sorted: Vec<&Observation> = obs.iter().collect();
    sorted.sort_by(|a, b| (&a.site_id, a.year).cmp(&(&b.site_id, b.year)));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site_id", "x_km", "y_km", "year", "pm_mean", "z"])?;
    for o in sorted {
        w.write_record([
            o.site_id.clone(),
            format!("{}", o.location.x),
            format!("{}", o.location.y),
            format!("{}", o.year),
            format!("{}", o.pm_mean),
            format!("{}", o.z),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read the canonical observations file back.
pub fn read_observations<R: Read>(reader: R, file_label: &str) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expect = ["site_id", "x_km", "y_km", "year", "pm_mean", "z"];
    for name in expect {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Schema {
                file: file_label.to_string(),
                msg: format!("missing column {name}"),
            });
        }
    }
    let idx: Vec<usize> = expect
        .iter()
        .map(|name| headers.iter().position(|h| h == *name).unwrap())
        .collect();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| Error::Parse {
            file: file_label.to_string(),
            line,
            msg,
        };
        let get = |i: usize| record.get(idx[i]).unwrap_or("");
        out.push(Observation {
            site_id: get(0).to_string(),
            location: PointKm::new(
                get(1).parse().map_err(|_| err("bad x_km".into()))?,
                get(2).parse().map_err(|_| err("bad y_km".into()))?,
            ),
            year: get(3).parse().map_err(|_| err("bad year".into()))?,
            pm_mean: get(4).parse().map_err(|_| err("bad pm_mean".into()))?,
            z: get(5).parse().map_err(|_| err("bad z".into()))?,
        });
    }
    if out.is_empty() {
        return Err(Error::NoData(format!("{file_label}: no observations")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::AlbersSpec;
    use approx::assert_relative_eq;

    const HEADER: &str = "State Code,County Code,Site Num,Parameter Code,POC,Latitude,Longitude,Datum,Parameter Name,Sample Duration,Metric Used,Year,Event Type,Observation Count,Arithmetic Mean,Local Site Name";

    fn row(
        site: &str,
        poc: u32,
        lat: f64,
        lon: f64,
        year: i32,
        event: &str,
        count: u64,
        mean: f64,
    ) -> String {
        format!(
            "06,037,{site},81102,{poc},{lat},{lon},NAD83,PM10,24 HOUR,Obs Mean,{year},{event},{count},{mean},Somewhere"
        )
    }

    fn albers() -> Albers {
        Albers::new(AlbersSpec::teale()).unwrap()
    }

    fn socab_like_polygon(albers: &Albers) -> Polygon {
        let ring: Vec<PointKm> = [
            (-119.0, 33.2),
            (-116.2, 33.2),
            (-116.2, 34.8),
            (-119.0, 34.8),
            (-119.0, 33.2),
        ]
        .iter()
        .map(|&(lon, lat)| albers.project(GeoPoint { lon, lat }).unwrap())
        .collect();
        Polygon::new(vec![ring]).unwrap()
    }

    #[test]
    fn parses_well_formed_rows() {
        let csv = format!(
            "{HEADER}\n{}\n{}\n{}\n",
            row("0001", 1, 34.0, -118.2, 2019, "No Events", 58, 42.0),
            row("0001", 2, 34.0, -118.2, 2019, "No Events", 60, 44.0),
            row("0002", 1, 33.9, -117.5, 2019, "No Events", 59, 38.5),
        );
        let rows = parse_annual_csv(csv.as_bytes(), "test.csv").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].site_id(), "06-037-0001");
        assert_eq!(rows[0].poc, 1);
    }

    #[test]
    fn event_type_preserved_verbatim() {
        let csv = format!(
            "{HEADER}\n{}\n",
            row("0001", 1, 34.0, -118.2, 2019, "Events Excluded", 58, 42.0)
        );
        let rows = parse_annual_csv(csv.as_bytes(), "test.csv").unwrap();
        assert_eq!(rows[0].event_type, "Events Excluded");
    }

    #[test]
    fn nonnumeric_mean_reports_line() {
        let csv = format!(
            "{HEADER}\n{}\n06,037,0002,81102,1,33.9,-117.5,NAD83,PM10,24 HOUR,Obs Mean,2019,No Events,59,oops,X\n",
            row("0001", 1, 34.0, -118.2, 2019, "No Events", 58, 42.0)
        );
        let err = parse_annual_csv(csv.as_bytes(), "test.csv").unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("Arithmetic Mean"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "State Code,County Code,Site Num,POC\n06,037,0001,1\n";
        assert!(matches!(
            parse_annual_csv(csv.as_bytes(), "test.csv"),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn empty_file_errors() {
        assert!(parse_annual_csv("".as_bytes(), "empty.csv").is_err());
        let only_header = format!("{HEADER}\n");
        assert!(matches!(
            parse_annual_csv(only_header.as_bytes(), "hdr.csv"),
            Err(Error::NoData(_))
        ));
    }

    fn filter_cfg<'a>(albers: &'a Albers, poly: &'a Polygon) -> FilterConfig<'a> {
        FilterConfig {
            parameter_code: "81102",
            start_year: 1986,
            end_year: 2019,
            albers,
            polygon: poly,
        }
    }

    #[test]
    fn events_excluded_variant_wins() {
        let a = albers();
        let poly = socab_like_polygon(&a);
        let csv = format!(
            "{HEADER}\n{}\n{}\n",
            row("0001", 1, 34.0, -118.2, 2019, "Events Included", 61, 45.0),
            row("0001", 1, 34.0, -118.2, 2019, "Events Excluded", 58, 42.0),
        );
        let rows = parse_annual_csv(csv.as_bytes(), "t.csv").unwrap();
        let kept = filter_rows(rows, &filter_cfg(&a, &poly)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].event_type, "Events Excluded");
        assert_relative_eq!(kept[0].arithmetic_mean, 42.0);
    }

    #[test]
    fn duplicate_rows_keep_larger_observation_count() {
        let a = albers();
        let poly = socab_like_polygon(&a);
        let csv = format!(
            "{HEADER}\n{}\n{}\n",
            row("0001", 1, 34.0, -118.2, 2019, "No Events", 30, 40.0),
            row("0001", 1, 34.0, -118.2, 2019, "No Events", 61, 45.0),
        );
        let rows = parse_annual_csv(csv.as_bytes(), "t.csv").unwrap();
        let kept = filter_rows(rows, &filter_cfg(&a, &poly)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].observation_count, 61);
    }

    #[test]
    fn wrong_parameter_and_outside_polygon_dropped() {
        let a = albers();
        let poly = socab_like_polygon(&a);
        let mut bad_param = row("0001", 1, 34.0, -118.2, 2019, "No Events", 58, 42.0);
        bad_param = bad_param.replace("81102", "88101");
        let outside = row("0009", 1, 38.5, -121.5, 2019, "No Events", 58, 33.0);
        let good = row("0002", 1, 34.0, -117.3, 2019, "No Events", 58, 51.0);
        let csv = format!("{HEADER}\n{bad_param}\n{outside}\n{good}\n");
        let rows = parse_annual_csv(csv.as_bytes(), "t.csv").unwrap();
        let kept = filter_rows(rows, &filter_cfg(&a, &poly)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].site_id(), "06-037-0002");
    }

    #[test]
    fn filter_to_zero_rows_errors() {
        let a = albers();
        let poly = socab_like_polygon(&a);
        let csv = format!(
            "{HEADER}\n{}\n",
            row("0001", 1, 34.0, -118.2, 1901, "No Events", 58, 42.0)
        );
        let rows = parse_annual_csv(csv.as_bytes(), "t.csv").unwrap();
        assert!(matches!(
            filter_rows(rows, &filter_cfg(&a, &poly)),
            Err(Error::NoData(_))
        ));
    }

    fn raw(site: &str, poc: u32, year: i32, mean: f64) -> RawRow {
        RawRow {
            state_code: "06".into(),
            county_code: "037".into(),
            site_number: site.into(),
            parameter_code: "81102".into(),
            poc,
            latitude: 34.0,
            longitude: -118.2,
            datum: "NAD83".into(),
            year,
            arithmetic_mean: mean,
            event_type: "No Events".into(),
            observation_count: 58,
            sample_duration: "24 HOUR".into(),
            metric_used: String::new(),
        }
    }

    #[test]
    fn poc_aggregation_takes_arithmetic_mean() {
        let a = albers();
        let single = aggregate_pocs(&[raw("0001", 1, 2019, 42.0)], &a).unwrap();
        assert_relative_eq!(single[0].pm_mean, 42.0);

        let two = aggregate_pocs(
            &[raw("0001", 1, 2019, 50.0), raw("0001", 2, 2019, 70.0)],
            &a,
        )
        .unwrap();
        assert_relative_eq!(two[0].pm_mean, 60.0);

        let three = aggregate_pocs(
            &[
                raw("0001", 1, 2019, 50.0),
                raw("0001", 2, 2019, 70.0),
                raw("0001", 3, 2019, 90.0),
            ],
            &a,
        )
        .unwrap();
        // oracle: (50 + 70 + 90) / 3
        assert_relative_eq!(three[0].pm_mean, (50.0 + 70.0 + 90.0) / 3.0);
    }

    #[test]
    fn coordinate_drift_over_one_km_errors() {
        let a = albers();
        let mut near = raw("0001", 1, 2018, 42.0);
        near.latitude = 34.0;
        let mut far = raw("0001", 2, 2019, 44.0);
        far.latitude = 34.02; // ~2.2 km north
        let err = aggregate_pocs(&[near, far], &a).unwrap_err();
        assert!(matches!(err, Error::InconsistentCoordinates { .. }));
    }

    #[test]
    fn site_year_unique_after_aggregation() {
        let a = albers();
        let rows = vec![
            raw("0001", 1, 2018, 42.0),
            raw("0001", 2, 2018, 44.0),
            raw("0001", 1, 2019, 40.0),
            raw("0002", 1, 2019, 39.0),
        ];
        let obs = aggregate_pocs(&rows, &a).unwrap();
        let mut keys: Vec<(String, i32)> =
            obs.iter().map(|o| (o.site_id.clone(), o.year)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), obs.len());
        assert_eq!(obs.len(), 3);
    }

    fn obs(site: &str, year: i32, pm: f64) -> Observation {
        Observation {
            site_id: site.into(),
            location: PointKm::new(0.0, 0.0),
            year,
            pm_mean: pm,
            z: 0.0,
        }
    }

    #[test]
    fn log_normalize_baseline_identity() {
        let mut v = vec![obs("a", 1986, 69.65397)];
        let b = log_normalize(&mut v, BaselineSpec::Supplied(69.65397)).unwrap();
        assert_eq!(b.value, 69.65397);
        assert_eq!(v[0].z, 0.0);
    }

    #[test]
    fn log_normalize_e_gives_one() {
        let mut v = vec![obs("a", 1986, 10.0 * std::f64::consts::E)];
        log_normalize(&mut v, BaselineSpec::Supplied(10.0)).unwrap();
        assert_relative_eq!(v[0].z, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn baseline_from_start_year_is_mean() {
        let mut v = vec![
            obs("a", 1986, 60.0),
            obs("b", 1986, 70.0),
            obs("c", 1986, 80.0),
            obs("d", 1986, 75.0),
            obs("e", 1986, 65.0),
            obs("f", 1990, 50.0),
        ];
        let b = log_normalize(&mut v, BaselineSpec::ComputedFromStartYear(1986)).unwrap();
        // hand sum: 60+70+80+75+65 = 350, /5 = 70
        assert_relative_eq!(b.value, 70.0);
        assert_eq!(b.source, BaselineSource::ComputedFromStartYear);
        assert_relative_eq!(v[5].z, (50.0f64 / 70.0).ln());
    }

    #[test]
    fn log_normalize_is_invertible() {
        let mut v: Vec<Observation> = (1..40)
            .map(|i| obs("s", 1986 + i, 20.0 + 3.7 * i as f64))
            .collect();
        let b = log_normalize(&mut v, BaselineSpec::Supplied(69.65397)).unwrap();
        for o in &v {
            assert_relative_eq!(o.z.exp() * b.value, o.pm_mean, max_relative = 1e-12);
        }
    }

    #[test]
    fn nonpositive_concentration_rejected() {
        let mut v = vec![obs("a", 1986, 0.0)];
        assert!(log_normalize(&mut v, BaselineSpec::Supplied(70.0)).is_err());
    }

    #[test]
    fn retention_categories() {
        let mk = |site: &str, years: Vec<i32>| SiteTimeline {
            site_id: site.into(),
            years_active: years,
            retention: None,
            land_use: None,
            location_setting: None,
            monitoring_objective: None,
        };
        let mut tls = vec![
            mk("cont", (1986..=2019).collect()),
            mk("rem", (1986..=1995).collect()),
            mk("add", (2000..=2019).collect()),
            mk("temp", (1990..=2005).collect()),
        ];
        classify_retention(&mut tls, 1986, 2019).unwrap();
        assert_eq!(tls[0].retention, Some(Retention::Continuous));
        assert_eq!(tls[1].retention, Some(Retention::Removed));
        assert_eq!(tls[2].retention, Some(Retention::Added));
        assert_eq!(tls[3].retention, Some(Retention::AddedThenRemoved));
    }

    #[test]
    fn retention_requires_years() {
        let mut tls = vec![SiteTimeline {
            site_id: "x".into(),
            years_active: vec![],
            retention: None,
            land_use: None,
            location_setting: None,
            monitoring_objective: None,
        }];
        assert!(classify_retention(&mut tls, 1986, 2019).is_err());
    }

    #[test]
    fn retention_partition_is_exhaustive_and_exclusive() {
        let mut tls: Vec<SiteTimeline> = (0..20)
            .map(|i| SiteTimeline {
                site_id: format!("s{i}"),
                years_active: vec![1986 + (i % 7), 2019 - (i % 5)],
                retention: None,
                land_use: None,
                location_setting: None,
                monitoring_objective: None,
            })
            .collect();
        classify_retention(&mut tls, 1986, 2019).unwrap();
        assert!(tls.iter().all(|t| t.retention.is_some()));
    }

    #[test]
    fn yearly_summary_quartiles() {
        let mut single = vec![obs("a", 2001, 50.0)];
        single[0].z = 0.7;
        let s = yearly_summary(&single).unwrap();
        assert_eq!(s[0].n, 1);
        assert_eq!(s[0].q1, 0.7);
        assert_eq!(s[0].median, 0.7);
        assert_eq!(s[0].q3, 0.7);

        let mut five: Vec<Observation> = (1..=5).map(|_| obs("s", 2001, 50.0)).collect();
        for (i, o) in five.iter_mut().enumerate() {
            o.z = (i + 1) as f64;
        }
        let s = yearly_summary(&five).unwrap();
        assert_eq!(s[0].median, 3.0);

        let mut two_years = vec![obs("a", 2001, 1.0), obs("b", 2001, 1.0), obs("a", 2002, 1.0)];
        for o in two_years.iter_mut() {
            o.z = 0.1;
        }
        let s = yearly_summary(&two_years).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].n, 2);
        assert_eq!(s[1].n, 1);
    }

    #[test]
    fn observations_roundtrip_through_canonical_csv() {
        let a = albers();
        let rows = vec![
            raw("0001", 1, 2018, 42.0),
            raw("0001", 1, 2019, 40.0),
            raw("0002", 1, 2019, 39.0),
        ];
        let mut obs = aggregate_pocs(&rows, &a).unwrap();
        log_normalize(&mut obs, BaselineSpec::Supplied(41.0)).unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &obs).unwrap();
        let back = read_observations(buf.as_slice(), "buf").unwrap();
        assert_eq!(obs, back);
    }

    #[test]
    fn metadata_join_fills_labels() {
        let meta_csv = "State Code,County Code,Site Number,Land Use,Location Setting,Monitoring Objective\n06,037,0001,RESIDENTIAL,SUBURBAN,POPULATION EXPOSURE\n06,037,0001,,URBAN,\n";
        let metas = parse_site_metadata(meta_csv.as_bytes(), "meta.csv").unwrap();
        assert_eq!(metas.len(), 1);
        let obs = vec![obs("06-037-0001", 2019, 40.0)];
        let tls = build_timelines(&obs, Some(&metas));
        assert_eq!(tls[0].land_use.as_deref(), Some("RESIDENTIAL"));
        assert_eq!(tls[0].location_setting.as_deref(), Some("SUBURBAN"));
    }
}
