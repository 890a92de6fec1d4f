//! Deterministic derivative-free minimization (Nelder-Mead simplex).

#[derive(Debug, Clone)]
pub struct NelderMeadConfig {
    pub max_evals: usize,
    /// Converged when the simplex function values span less than this.
    pub tol_f: f64,
    /// ... and the simplex edge lengths fall below this.
    pub tol_x: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            tol_f: 1e-10,
            tol_x: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0` with per-dimension initial steps.
/// Non-finite objective values are treated as +inf, so the simplex backs
/// away from infeasible regions.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    cfg: &NelderMeadConfig,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(step.len(), dim);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    // initial simplex: x0 plus one vertex per coordinate
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step[i];
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;

    while evals < cfg.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let f_best = simplex[0].1;
        let f_worst = simplex[dim].1;
        let spread = f_worst - f_best;
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.is_finite() && spread < cfg.tol_f && size < cfg.tol_x {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_r = eval(&reflect, &mut evals);

        if f_r < simplex[0].1 {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_e = eval(&expand, &mut evals);
            simplex[dim] = if f_e < f_r {
                (expand, f_e)
            } else {
                (reflect, f_r)
            };
        } else if f_r < simplex[dim - 1].1 {
            simplex[dim] = (reflect, f_r);
        } else {
            let contract: Vec<f64> = if f_r < worst.1 {
                centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| c + rho * (r - c))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + rho * (w - c))
                    .collect()
            };
            let f_c = eval(&contract, &mut evals);
            if f_c < worst.1.min(f_r) {
                simplex[dim] = (contract, f_c);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let fv = eval(&v, &mut evals);
                    *entry = (v, fv);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    NelderMeadResult {
        x: simplex[0].0.clone(),
        f: simplex[0].1,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &NelderMeadConfig::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6);
        assert!((r.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let cfg = NelderMeadConfig {
            max_evals: 5000,
            ..Default::default()
        };
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &cfg,
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn backs_away_from_infeasible_region() {
        let r = nelder_mead(
            |x| {
                if x[0] <= 0.0 {
                    f64::NAN
                } else {
                    (x[0].ln() - 1.0).powi(2)
                }
            },
            &[0.5, 0.0][..1].to_vec().as_slice(),
            &[0.4],
            &NelderMeadConfig::default(),
        );
        assert!((r.x[0] - std::f64::consts::E).abs() < 1e-5);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            nelder_mead(
                |x| x[0].powi(4) + x[1].powi(2) + 0.3 * x[0] * x[1],
                &[1.7, -2.3],
                &[0.7, 0.7],
                &NelderMeadConfig::default(),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.f, b.f);
    }
}
