//! Yearly trend structure: the intrinsic random-walk precision with its
//! identifiability constraints, and the fixed-effect design matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Observation, Retention, SiteTimeline};

/// Shape of the yearly trend term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendKind {
    None,
    Linear,
    Quadratic,
    Rw1,
    Rw2,
}

impl TrendKind {
    pub fn rw_order(&self) -> Option<usize> {
        match self {
            TrendKind::Rw1 => Some(1),
            TrendKind::Rw2 => Some(2),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrendKind::None => "none",
            TrendKind::Linear => "linear",
            TrendKind::Quadratic => "quadratic",
            TrendKind::Rw1 => "rw1",
            TrendKind::Rw2 => "rw2",
        }
    }
}

impl std::str::FromStr for TrendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(TrendKind::None),
            "linear" => Ok(TrendKind::Linear),
            "quadratic" => Ok(TrendKind::Quadratic),
            "rw1" => Ok(TrendKind::Rw1),
            "rw2" => Ok(TrendKind::Rw2),
            other => Err(Error::Domain(format!("unknown trend kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Constrained covariance structure of an intrinsic random walk over the
/// modeled years.
///
/// `qpinv` is the Moore-Penrose pseudo-inverse of the difference-structure
/// matrix `D' D`; restricting to the row space enforces the zero-sum
/// (order 1) respectively zero-sum and zero-drift (order 2) constraints
/// that identify the intercept. `factor * factor' = qpinv`.
#[derive(Debug, Clone)]
pub struct RwStructure {
    pub qpinv: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

pub fn rw_structure(n_years: usize, order: usize) -> Result<RwStructure> {
    if n_years < order + 1 {
        return Err(Error::InsufficientData(format!(
            "rw{order} trend needs at least {} years, got {n_years}",
            order + 1
        )));
    }
    let rows = n_years - order;
    let mut d = DMatrix::zeros(rows, n_years);
    for i in 0..rows {
        match order {
            1 => {
                d[(i, i)] = -1.0;
                d[(i, i + 1)] = 1.0;
            }
            2 => {
                d[(i, i)] = 1.0;
                d[(i, i + 1)] = -2.0;
                d[(i, i + 2)] = 1.0;
            }
            _ => return Err(Error::Domain(format!("rw order must be 1 or 2: {order}"))),
        }
    }
    let q = d.transpose() * &d;
    let eig = nalgebra::SymmetricEigen::new(q);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max_ev * 1e-10;
    let mut qpinv = DMatrix::zeros(n_years, n_years);
    let mut cols = Vec::new();
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    for (k, &ev) in eigenvalues.iter().enumerate() {
        if ev > tol {
            let v = eig.eigenvectors.column(k);
            qpinv += DMatrix::from_fn(n_years, n_years, |i, j| v[i] * v[j] / ev);
            cols.push(v.map(|x| x / ev.sqrt()));
        }
    }
    if cols.len() != n_years - order {
        return Err(Error::Domain(format!(
            "rw structure rank {} != {}",
            cols.len(),
            n_years - order
        )));
    }
    let factor = DMatrix::from_columns(&cols);
    Ok(RwStructure { qpinv, factor })
}

/// Fixed-effect design matrix: intercept, optional fixed time trend and
/// optional retention-category dummies (baseline: added sites).
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub year_center: f64,
}

pub fn build_design(
    obs: &[Observation],
    trend: TrendKind,
    retention: Option<&[SiteTimeline]>,
) -> Result<Design> {
    let n = obs.len();
    let year_center = obs.iter().map(|o| o.year as f64).sum::<f64>() / n as f64;
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
    let mut names = vec!["intercept".to_string()];
    match trend {
        TrendKind::Linear => {
            cols.push(DVector::from_fn(n, |i, _| obs[i].year as f64 - year_center));
            names.push("year".into());
        }
        TrendKind::Quadratic => {
            cols.push(DVector::from_fn(n, |i, _| obs[i].year as f64 - year_center));
            cols.push(DVector::from_fn(n, |i, _| {
                (obs[i].year as f64 - year_center).powi(2)
            }));
            names.push("year".into());
            names.push("year2".into());
        }
        _ => {}
    }
    if let Some(timelines) = retention {
        let by_site: std::collections::BTreeMap<&str, Retention> = timelines
            .iter()
            .filter_map(|t| t.retention.map(|r| (t.site_id.as_str(), r)))
            .collect();
        let dummies = [
            (Retention::Continuous, "retention_continuous"),
            (Retention::Removed, "retention_removed"),
            (Retention::AddedThenRemoved, "retention_added_then_removed"),
        ];
        for (cat, name) in dummies {
            let col = DVector::from_fn(n, |i, _| {
                match by_site.get(obs[i].site_id.as_str()) {
                    Some(&r) if r == cat => 1.0,
                    Some(_) => 0.0,
                    None => f64::NAN,
                }
            });
            if col.iter().any(|v| v.is_nan()) {
                return Err(Error::DataMismatch(
                    "retention effects requested but some sites lack a classified timeline"
                        .into(),
                ));
            }
            // skip empty categories so X keeps full rank
            if col.iter().any(|&v| v != 0.0) {
                cols.push(col);
                names.push(name.into());
            }
        }
    }
    let x = DMatrix::from_columns(&cols);
    Ok(Design {
        x,
        names,
        year_center,
    })
}
