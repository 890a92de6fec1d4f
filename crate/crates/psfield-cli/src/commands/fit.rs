//! `psfield fit`: MAP estimation of the space-time model, saved as JSON.

use psfield::model::{fit_map, FitConfig};
use psfield::optim::NelderMeadConfig;

use crate::config::{ResolvedPaths, RunConfig};
use crate::out::fnum;
use crate::CliError;

pub fn build_fit_config(cfg: &RunConfig) -> Result<FitConfig, CliError> {
    Ok(FitConfig {
        trend: cfg.model.trend_kind()?,
        ar1: cfg.model.ar1,
        kappa: cfg.model.kappa,
        priors: cfg.model.priors()?,
        retention_effects: cfg.model.retention_effects,
        init: None,
        optim: NelderMeadConfig {
            max_evals: cfg.model.max_evals,
            tol_f: 1e-9,
            tol_x: 1e-6,
        },
    })
}

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let fit_cfg = build_fit_config(cfg)?;
    let timelines = if fit_cfg.retention_effects {
        Some(super::load_timelines(paths)?)
    } else {
        None
    };
    let model = fit_map(&obs, timelines.as_deref(), &fit_cfg)?;
    crate::out::write_file(&paths.model(), &format!("{}\n", model.to_json()?))?;

    println!("fitted on {} observations, {} years", model.n_obs, model.years.len());
    println!("  trend            {} (ar1: {})", model.trend_kind, model.ar1);
    println!("  intercept        {}", fnum(model.beta0));
    println!("  matern range km  {}", fnum(model.spatial.range_km));
    println!("  marginal sd      {}", fnum(model.spatial.sigma));
    println!("  sigma_w          {}", fnum(model.sigma_w));
    println!("  ar1 coefficient  {}", fnum(model.a));
    println!("  noise precision  {}", fnum(model.tau_eps));
    if let Some(tau) = model.tau_rw {
        println!("  rw precision     {}", fnum(tau));
    }
    for (name, value) in &model.fixed_effects {
        println!("  {name}  {}", fnum(*value));
    }
    println!("  log-likelihood   {}", fnum(model.loglik));
    println!("  map objective    {}", fnum(model.objective));
    println!("wrote {}", paths.model().display());
    Ok(())
}
