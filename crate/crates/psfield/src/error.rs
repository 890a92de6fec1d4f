use thiserror::Error;

/// Errors produced by any psfield operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid projection spec: {0}")]
    InvalidProjection(String),

    #[error("projection domain error: {0}")]
    ProjectionDomain(String),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("degenerate polygon: acceptance rate {rate:.2e} after {attempts} draws")]
    DegeneratePolygon { rate: f64, attempts: u64 },

    #[error("empty grid: spacing {spacing_km} km produced no cells inside the polygon")]
    EmptyGrid { spacing_km: f64 },

    #[error("schema error in {file}: {msg}")]
    Schema { file: String, msg: String },

    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("no data: {0}")]
    NoData(String),

    #[error("site {site}: POC coordinates disagree by {dist_km:.3} km (limit 1 km)")]
    InconsistentCoordinates { site: String, dist_km: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero rank variance on the {side} side of the correlation")]
    ZeroRankVariance { side: &'static str },

    #[error("covariance matrix is not positive definite{hint}")]
    NotPositiveDefinite { hint: String },

    #[error("optimizer did not converge after {evals} evaluations (best objective {best:.6e})")]
    NonConvergence { evals: usize, best: f64 },

    #[error("year {year} outside modeled span {first}..={last}")]
    YearOutsideSpan { year: i32, first: i32, last: i32 },

    #[error(
        "grid too coarse: nearest surface pixel is {nearest_km:.3} km away (spacing {spacing_km} km)"
    )]
    GridTooCoarse { nearest_km: f64, spacing_km: f64 },

    #[error("model/data mismatch: {0}")]
    DataMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
