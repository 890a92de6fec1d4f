//! Deterministic file emission helpers: CSV with shortest-roundtrip float
//! formatting, and a self-contained SVG heat map.

use std::io::Write;
use std::path::Path;

use psfield::model::PredictionSurface;

use crate::CliError;

pub fn fnum(v: f64) -> String {
    format!("{v}")
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Write CSV rows (caller formats fields) with a header line.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut content = String::with_capacity(rows.len() * 32 + header.len() + 2);
    content.push_str(header);
    content.push('\n');
    for row in rows {
        content.push_str(row);
        content.push('\n');
    }
    write_file(path, &content)
}

fn ramp(t: f64) -> (u8, u8, u8) {
    // compact blue -> green -> yellow ramp
    let t = t.clamp(0.0, 1.0);
    let stops = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let x = t * (stops.len() - 1) as f64;
    let i = (x as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let mix = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    (
        mix(stops[i].0, stops[i + 1].0),
        mix(stops[i].1, stops[i + 1].1),
        mix(stops[i].2, stops[i + 1].2),
    )
}

/// Render the surface means as colored cells.
pub fn surface_svg(surface: &PredictionSurface) -> String {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (p, &m) in surface.points.iter().zip(&surface.mean) {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let s = surface.spacing_km;
    let width = max_x - min_x + s;
    let height = max_y - min_y + s;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {:.3} {:.3}\" width=\"900\">\n",
        width, height
    ));
    svg.push_str(&format!(
        "<title>kriged surface {} ({} cells, mean {:.4}..{:.4})</title>\n",
        surface.year,
        surface.len(),
        lo,
        hi
    ));
    let span = (hi - lo).max(1e-12);
    for (p, &m) in surface.points.iter().zip(&surface.mean) {
        let (r, g, b) = ramp((m - lo) / span);
        // cell corner in svg coordinates, y flipped so north is up
        let x = p.x - min_x;
        let y = max_y - p.y;
        svg.push_str(&format!(
            "<rect x=\"{x:.3}\" y=\"{y:.3}\" width=\"{s:.3}\" height=\"{s:.3}\" fill=\"rgb({r},{g},{b})\"/>\n",
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
