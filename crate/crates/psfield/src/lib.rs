//! Spatio-temporal modelling of an annual pollutant field over a monitoring
//! region, and a Monte-Carlo rank-correlation test for preferential sampling
//! of the monitoring network.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`geo`]: Albers equal-area projection, region polygon, uniform site
//!   sampling and prediction grids;
//! - [`ingest`]: annual-summary CSV parsing, filtering, instrument
//!   aggregation, log-normalization and site retention history;
//! - [`covariance`]: Matérn correlation, empirical variograms and the
//!   separable space-time covariance;
//! - [`model`]: penalised-complexity priors, MAP hyperparameter estimation
//!   of the latent Gaussian field, kriging prediction and validation;
//! - [`pstest`]: the k-nearest-neighbour Spearman test for preferential
//!   sampling with Monte-Carlo null networks.

pub mod covariance;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod pstest;
pub mod special;
pub mod stats;

pub use covariance::{EmpiricalVariogram, MaternParams, TemporalParams};
pub use error::{Error, Result};
pub use geo::{AlbersSpec, GeoPoint, PointKm, Polygon};
pub use ingest::{Baseline, Observation, Retention, SiteTimeline};
pub use model::{FittedModel, PcPriorSpec, PredictionSurface, TrendKind};
pub use pstest::{PsSeries, PsTestResult};
