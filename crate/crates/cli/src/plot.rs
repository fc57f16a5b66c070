//! SVG figures. Plots are derived from the CSV data and never gate it: a
//! plotting error is reported and the command carries on.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 600);

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| anyhow!("{e}"))?;
    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?
            .label(s.label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Vertical bars at integer positions, e.g. a histogram or a per-rung table.
pub fn bar_chart(path: &Path, title: &str, x_label: &str, y_label: &str, bars: &[(i64, f64)], log_y: bool) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let xmin = bars.iter().map(|b| b.0).min().unwrap_or(0);
    let xmax = bars.iter().map(|b| b.0).max().unwrap_or(1);
    let x_range = (xmin as f64 - 0.6)..(xmax as f64 + 0.6);
    let ymax = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 20)).margin(15).x_label_area_size(40).y_label_area_size(60);
    if log_y {
        let ymin = bars.iter().map(|b| b.1).filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let ymin = if ymin.is_finite() { ymin / 3.0 } else { 1e-6 };
        let mut chart = builder.build_cartesian_2d(x_range, (ymin..ymax * 3.0).log_scale()).map_err(|e| anyhow!("{e}"))?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| anyhow!("{e}"))?;
        chart
            .draw_series(bars.iter().filter(|b| b.1 > 0.0).map(|(x, y)| {
                Rectangle::new([(*x as f64 - 0.4, ymin), (*x as f64 + 0.4, *y)], BLUE.mix(0.7).filled())
            }))
            .map_err(|e| anyhow!("{e}"))?;
    } else {
        let mut chart = builder.build_cartesian_2d(x_range, 0.0..ymax * 1.1).map_err(|e| anyhow!("{e}"))?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| anyhow!("{e}"))?;
        chart
            .draw_series(
                bars.iter().map(|(x, y)| Rectangle::new([(*x as f64 - 0.4, 0.0), (*x as f64 + 0.4, *y)], BLUE.mix(0.7).filled())),
            )
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Heat map of z[i][j] over (x[i], y[j]) on a log colour scale floored at
/// 1e-6 of the maximum, with optional overlay curves (x as a function of y).
pub fn heat_map(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    x: &[f64],
    y: &[f64],
    z: &dyn Fn(usize, usize) -> f64,
    curves: &[Vec<(f64, f64)>],
) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let half = |v: &[f64]| if v.len() > 1 { 0.5 * (v[1] - v[0]).abs() } else { 0.5 };
    let (hx, hy) = (half(x), half(y));
    let (x0, x1) = (x.iter().copied().fold(f64::INFINITY, f64::min) - hx, x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + hx);
    let (y0, y1) = (y.iter().copied().fold(f64::INFINITY, f64::min) - hy, y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + hy);
    let mut zmax = f64::NEG_INFINITY;
    for i in 0..x.len() {
        for j in 0..y.len() {
            let v = z(i, j);
            if v.is_finite() {
                zmax = zmax.max(v);
            }
        }
    }
    let floor = (zmax * 1e-6).max(f64::MIN_POSITIVE);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart.configure_mesh().disable_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| anyhow!("{e}"))?;
    let span = (zmax / floor).ln().max(1e-300);
    let mut cells = Vec::with_capacity(x.len() * y.len());
    for i in 0..x.len() {
        for j in 0..y.len() {
            let v = z(i, j);
            let t = if v.is_finite() { ((v.max(floor) / floor).ln() / span).clamp(0.0, 1.0) } else { 0.0 };
            let color = ViridisRGB::get_color(t);
            cells.push(Rectangle::new([(x[i] - hx, y[j] - hy), (x[i] + hx, y[j] + hy)], color.filled()));
        }
    }
    chart.draw_series(cells).map_err(|e| anyhow!("{e}"))?;
    for c in curves {
        chart.draw_series(LineSeries::new(c.iter().copied(), WHITE.stroke_width(1))).map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Run a plotting closure and downgrade failures to a warning.
pub fn best_effort(name: &str, f: impl FnOnce() -> Result<()>) {
    if let Err(e) = f() {
        eprintln!("warning: plot {name} skipped: {e:#}");
    }
}
