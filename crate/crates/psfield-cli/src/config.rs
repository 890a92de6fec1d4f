//! Run configuration: one TOML file drives every pipeline command.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use psfield::geo::{AlbersSpec, Ellipsoid};
use psfield::model::{PcPriorSpec, TrendKind};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub projection: Projection,
    pub data: DataCfg,
    #[serde(default)]
    pub variogram: VariogramCfg,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub predict: PredictCfg,
    #[serde(default)]
    pub validate: ValidateCfg,
    #[serde(default)]
    pub pstest: PsTestCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of annual summary CSV files.
    pub data_dir: PathBuf,
    /// Optional site metadata CSV.
    #[serde(default)]
    pub site_metadata: Option<PathBuf>,
    /// Basin boundary GeoJSON (Polygon or MultiPolygon, lon/lat).
    pub polygon: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
    pub lat1: f64,
    pub lat2: f64,
    pub false_easting_km: f64,
    pub false_northing_km: f64,
    pub ellipsoid: String,
}

impl Default for Projection {
    fn default() -> Self {
        let t = AlbersSpec::teale();
        Self {
            lon0: t.lon0,
            lat0: t.lat0,
            lat1: t.lat1,
            lat2: t.lat2,
            false_easting_km: t.false_easting_km,
            false_northing_km: t.false_northing_km,
            ellipsoid: "grs80".into(),
        }
    }
}

impl Projection {
    pub fn to_spec(&self) -> Result<AlbersSpec, CliError> {
        let ellipsoid = match self.ellipsoid.as_str() {
            "grs80" => Ellipsoid::Grs80,
            "sphere" => Ellipsoid::Sphere,
            other => {
                return Err(CliError::Config(format!(
                    "projection.ellipsoid must be \"grs80\" or \"sphere\", got {other:?}"
                )))
            }
        };
        Ok(AlbersSpec {
            lon0: self.lon0,
            lat0: self.lat0,
            lat1: self.lat1,
            lat2: self.lat2,
            false_easting_km: self.false_easting_km,
            false_northing_km: self.false_northing_km,
            ellipsoid,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    #[serde(default = "default_parameter_code")]
    pub parameter_code: String,
    pub start_year: i32,
    pub end_year: i32,
    /// Either the literal "start-year-mean" or a positive number.
    #[serde(default)]
    pub baseline: BaselineCfg,
}

fn default_parameter_code() -> String {
    "81102".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BaselineCfg {
    Value(f64),
    Mode(String),
}

impl Default for BaselineCfg {
    fn default() -> Self {
        BaselineCfg::Mode("start-year-mean".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariogramCfg {
    pub n_bins: usize,
    pub max_dist_km: f64,
    pub kappa: f64,
}

impl Default for VariogramCfg {
    fn default() -> Self {
        Self {
            n_bins: 12,
            max_dist_km: 80.0,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCfg {
    pub kappa: f64,
    pub trend: String,
    pub ar1: bool,
    pub retention_effects: bool,
    pub range_prior_km: f64,
    pub range_prior_prob: f64,
    pub sigma_prior: f64,
    pub sigma_prior_prob: f64,
    /// "empirical" or a positive number.
    pub rw_sd_prior: RwSdCfg,
    pub rw_sd_prior_prob: f64,
    pub max_evals: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RwSdCfg {
    Value(f64),
    Mode(String),
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            trend: "rw1".into(),
            ar1: true,
            retention_effects: false,
            range_prior_km: 6.0,
            range_prior_prob: 0.01,
            sigma_prior: 35.0,
            sigma_prior_prob: 0.01,
            rw_sd_prior: RwSdCfg::Mode("empirical".into()),
            rw_sd_prior_prob: 0.01,
            max_evals: 2500,
        }
    }
}

impl ModelCfg {
    pub fn trend_kind(&self) -> Result<TrendKind, CliError> {
        self.trend
            .parse()
            .map_err(|e: psfield::Error| CliError::Config(e.to_string()))
    }

    pub fn priors(&self) -> Result<PcPriorSpec, CliError> {
        let rw_sd_upper = match &self.rw_sd_prior {
            RwSdCfg::Value(v) if *v > 0.0 => Some(*v),
            RwSdCfg::Value(v) => {
                return Err(CliError::Config(format!(
                    "model.rw_sd_prior must be positive, got {v}"
                )))
            }
            RwSdCfg::Mode(m) if m == "empirical" => None,
            RwSdCfg::Mode(m) => {
                return Err(CliError::Config(format!(
                    "model.rw_sd_prior must be \"empirical\" or a number, got {m:?}"
                )))
            }
        };
        let spec = PcPriorSpec {
            range_lower_km: self.range_prior_km,
            range_prob: self.range_prior_prob,
            sigma_upper: self.sigma_prior,
            sigma_prob: self.sigma_prior_prob,
            rw_sd_upper,
            rw_sd_prob: self.rw_sd_prior_prob,
        };
        spec.validate()
            .map_err(|e| CliError::Config(format!("model priors: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictCfg {
    pub grid_spacing_km: f64,
    /// Years to predict; empty means every modeled year.
    pub years: Vec<i32>,
    pub svg: bool,
}

impl Default for PredictCfg {
    fn default() -> Self {
        Self {
            grid_spacing_km: 2.0,
            years: vec![],
            svg: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateCfg {
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ValidateCfg {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.1,
            seed: 20190547,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsTestCfg {
    pub k: usize,
    /// Additional neighbour counts for the multi-k scan table.
    pub k_scan: Vec<usize>,
    pub m: usize,
    pub seed: u64,
    pub n_min: usize,
    pub include_null_rhos: bool,
}

impl Default for PsTestCfg {
    fn default() -> Self {
        Self {
            k: 3,
            k_scan: vec![],
            m: 1000,
            seed: 4711,
            n_min: 10,
            include_null_rhos: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, origin: &Path) -> Result<(), CliError> {
        let base = origin.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        for (name, p) in [
            ("paths.data_dir", &self.paths.data_dir),
            ("paths.polygon", &self.paths.polygon),
        ] {
            if !resolve(p).exists() {
                return Err(CliError::Config(format!(
                    "{name} does not exist: {}",
                    resolve(p).display()
                )));
            }
        }
        if let Some(meta) = &self.paths.site_metadata {
            if !resolve(meta).exists() {
                return Err(CliError::Config(format!(
                    "paths.site_metadata does not exist: {}",
                    resolve(meta).display()
                )));
            }
        }
        if self.data.start_year > self.data.end_year {
            return Err(CliError::Config(format!(
                "data.start_year {} > data.end_year {}",
                self.data.start_year, self.data.end_year
            )));
        }
        if let BaselineCfg::Value(v) = self.data.baseline {
            if !(v > 0.0) {
                return Err(CliError::Config(format!(
                    "data.baseline must be positive, got {v}"
                )));
            }
        }
        if let BaselineCfg::Mode(m) = &self.data.baseline {
            if m != "start-year-mean" {
                return Err(CliError::Config(format!(
                    "data.baseline must be \"start-year-mean\" or a number, got {m:?}"
                )));
            }
        }
        if self.variogram.n_bins < 4 {
            return Err(CliError::Config(format!(
                "variogram.n_bins must be at least 4, got {}",
                self.variogram.n_bins
            )));
        }
        if !(self.variogram.max_dist_km > 0.0) {
            return Err(CliError::Config(format!(
                "variogram.max_dist_km must be positive, got {}",
                self.variogram.max_dist_km
            )));
        }
        if !(self.predict.grid_spacing_km > 0.0) {
            return Err(CliError::Config(format!(
                "predict.grid_spacing_km must be positive, got {}",
                self.predict.grid_spacing_km
            )));
        }
        if !(self.validate.holdout_fraction > 0.0 && self.validate.holdout_fraction <= 0.5) {
            return Err(CliError::Config(format!(
                "validate.holdout_fraction must lie in (0, 0.5], got {}",
                self.validate.holdout_fraction
            )));
        }
        if self.pstest.k == 0 {
            return Err(CliError::Config("pstest.k must be at least 1".into()));
        }
        if self.pstest.m == 0 {
            return Err(CliError::Config("pstest.m must be at least 1".into()));
        }
        if self.pstest.n_min < self.pstest.k + 2 {
            return Err(CliError::Config(format!(
                "pstest.n_min must be at least k + 2 = {}, got {}",
                self.pstest.k + 2,
                self.pstest.n_min
            )));
        }
        self.projection.to_spec()?;
        self.model.trend_kind()?;
        self.model.priors()?;
        Ok(())
    }

    /// Paths resolved relative to the config file location.
    pub fn resolved(&self, origin: &Path) -> ResolvedPaths {
        let base = origin.parent().unwrap_or(Path::new(".")).to_path_buf();
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        ResolvedPaths {
            data_dir: resolve(&self.paths.data_dir),
            site_metadata: self.paths.site_metadata.as_deref().map(resolve),
            polygon: resolve(&self.paths.polygon),
            output_dir: resolve(&self.paths.output_dir),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedPaths {
    pub data_dir: PathBuf,
    pub site_metadata: Option<PathBuf>,
    pub polygon: PathBuf,
    pub output_dir: PathBuf,
}

impl ResolvedPaths {
    pub fn observations(&self) -> PathBuf {
        self.output_dir.join("observations.csv")
    }
    pub fn timelines(&self) -> PathBuf {
        self.output_dir.join("timelines.csv")
    }
    pub fn yearly_summary(&self) -> PathBuf {
        self.output_dir.join("yearly_summary.csv")
    }
    pub fn variogram_dir(&self) -> PathBuf {
        self.output_dir.join("variograms")
    }
    pub fn model(&self) -> PathBuf {
        self.output_dir.join("model.json")
    }
    pub fn surfaces_dir(&self) -> PathBuf {
        self.output_dir.join("surfaces")
    }
    pub fn validation_json(&self) -> PathBuf {
        self.output_dir.join("validation.json")
    }
    pub fn validation_csv(&self) -> PathBuf {
        self.output_dir.join("validation.csv")
    }
    pub fn pstest_json(&self) -> PathBuf {
        self.output_dir.join("pstest.json")
    }
    pub fn pstest_csv(&self) -> PathBuf {
        self.output_dir.join("pstest.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.output_dir.join("report.txt")
    }
}
