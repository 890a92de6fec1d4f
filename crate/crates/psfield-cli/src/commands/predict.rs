//! `psfield predict`: kriged mean/SD surfaces on the basin grid.

use psfield::geo::make_grid;
use psfield::model::predict_surfaces;

use crate::config::{ResolvedPaths, RunConfig};
use crate::CliError;

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let model = super::load_model(paths, &obs)?;
    let polygon = super::load_polygon(cfg, paths)?;
    let grid = make_grid(&polygon, cfg.predict.grid_spacing_km)?;

    let years: Vec<i32> = if cfg.predict.years.is_empty() {
        model.years.clone()
    } else {
        cfg.predict.years.clone()
    };
    let surfaces = predict_surfaces(&model, &grid, cfg.predict.grid_spacing_km, &years)?;
    for s in &surfaces {
        super::write_surface(paths, s)?;
        if cfg.predict.svg {
            let svg = crate::out::surface_svg(s);
            crate::out::write_file(
                &paths.surfaces_dir().join(format!("surface_{}.svg", s.year)),
                &svg,
            )?;
        }
        println!("{}: {} grid cells", s.year, s.len());
    }
    println!(
        "wrote {} surfaces ({} cells each) to {}",
        surfaces.len(),
        grid.len(),
        paths.surfaces_dir().display()
    );
    Ok(())
}
