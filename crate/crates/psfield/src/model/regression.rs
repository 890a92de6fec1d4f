//! Fixed-trend exploratory regressions of the yearly series: ordinary least
//! squares on year (and year squared) with a nested-model F-test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendRegression {
    pub order: usize,
    /// `[intercept, slope (per year), curvature]` on centered years.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub rss: f64,
    /// Residuals in year order, the input series for ACF/PACF diagnostics.
    pub residuals: Vec<f64>,
    /// For order 2: F statistic and p-value of quadratic vs linear.
    pub f_vs_linear: Option<(f64, f64)>,
}

fn ols(years: &[f64], values: &[f64], order: usize) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let n = values.len();
    let center = years.iter().sum::<f64>() / n as f64;
    let mut cols = vec![DVector::from_element(n, 1.0)];
    cols.push(DVector::from_fn(n, |i, _| years[i] - center));
    if order == 2 {
        cols.push(DVector::from_fn(n, |i, _| (years[i] - center).powi(2)));
    }
    let x = DMatrix::from_columns(&cols);
    let y = DVector::from_column_slice(values);
    let xtx = x.transpose() * &x;
    let chol = nalgebra::Cholesky::new(xtx).ok_or(Error::Domain(
        "trend regression design is rank deficient".into(),
    ))?;
    let beta = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &beta;
    let rss = resid.dot(&resid);
    Ok((beta.iter().copied().collect(), rss, resid.iter().copied().collect()))
}

/// Least-squares fit of the yearly series on (centered) year, and year
/// squared for `order == 2`. The F statistic for order 2 against order 1 is
/// `((RSS1 - RSS2) / 1) / (RSS2 / (n - 3))`.
pub fn fit_trend_regression(series: &[(i32, f64)], order: usize) -> Result<TrendRegression> {
    if !(order == 1 || order == 2) {
        return Err(Error::Domain(format!("order must be 1 or 2: {order}")));
    }
    if series.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "trend regression needs at least 4 years, got {}",
            series.len()
        )));
    }
    let mut sorted: Vec<(i32, f64)> = series.to_vec();
    sorted.sort_by_key(|&(y, _)| y);
    let years: Vec<f64> = sorted.iter().map(|&(y, _)| y as f64).collect();
    let values: Vec<f64> = sorted.iter().map(|&(_, v)| v).collect();
    let n = values.len();

    let (coefficients, rss, residuals) = ols(&years, &values, order)?;
    let mean = values.iter().sum::<f64>() / n as f64;
    let tss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let k = order as f64;
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n as f64 - 1.0 - k);

    let f_vs_linear = if order == 2 {
        let (_, rss1, _) = ols(&years, &values, 1)?;
        let df2 = n as f64 - 3.0;
        let f = ((rss1 - rss).max(0.0) / 1.0) / (rss / df2);
        let p = if f > 0.0 {
            1.0 - statrs::distribution::FisherSnedecor::new(1.0, df2)
                .map_err(|e| Error::Domain(e.to_string()))?
                .cdf(f)
        } else {
            1.0
        };
        Some((f, p))
    } else {
        None
    };

    Ok(TrendRegression {
        order,
        coefficients,
        r_squared,
        adj_r_squared,
        rss,
        residuals,
        f_vs_linear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_line_gives_r2_one_and_no_curvature() {
        let series: Vec<(i32, f64)> = (1986..2020)
            .map(|y| (y, 1.5 - 0.027 * (y - 1986) as f64))
            .collect();
        let lin = fit_trend_regression(&series, 1).unwrap();
        assert_relative_eq!(lin.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(lin.coefficients[1], -0.027, epsilon = 1e-12);
        let quad = fit_trend_regression(&series, 2).unwrap();
        assert!(quad.coefficients[2].abs() < 1e-12);
    }

    #[test]
    fn strong_curvature_detected_by_f_test() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let series: Vec<(i32, f64)> = (2000..2030)
            .map(|y| {
                let t = (y - 2015) as f64;
                (y, 0.5 - 0.02 * t + 0.01 * t * t + 0.05 * rng.gen_range(-1.0..1.0))
            })
            .collect();
        let quad = fit_trend_regression(&series, 2).unwrap();
        let (f, p) = quad.f_vs_linear.unwrap();
        assert!(f > 10.0, "F = {f}");
        assert!(p < 0.01, "p = {p}");
    }

    #[test]
    fn residuals_sum_to_zero() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        let series: Vec<(i32, f64)> = (2000..2020)
            .map(|y| (y, rng.gen_range(-1.0..1.0)))
            .collect();
        let fit = fit_trend_regression(&series, 1).unwrap();
        let s: f64 = fit.residuals.iter().sum();
        assert!(s.abs() < 1e-10);
        assert_eq!(fit.residuals.len(), 20);
    }

    #[test]
    fn too_few_years_rejected() {
        let series = vec![(2000, 0.1), (2001, 0.2), (2002, 0.3)];
        assert!(fit_trend_regression(&series, 1).is_err());
    }
}
