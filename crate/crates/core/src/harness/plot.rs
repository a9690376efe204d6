//! Static SVG charts: bend angle over time, cable velocities, report table.

use plotters::prelude::*;

use crate::analysis::Report;
use crate::error::{Error, Result};
use crate::robot::RobotTick;

const SIZE: (u32, u32) = (900, 420);

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::InvalidInput(format!("plot: {e:?}"))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

type Series<'a> = (&'a str, RGBColor, Vec<(f64, f64)>);

fn line_chart(title: &str, y_desc: &str, series: &[Series<'_>]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (x0, x1) = bounds(series.iter().flat_map(|s| s.2.iter().map(|p| p.0)));
        let (y0, y1) = bounds(series.iter().flat_map(|s| s.2.iter().map(|p| p.1)));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t [s]").y_desc(y_desc).draw().map_err(plot_err)?;
        for (name, color, points) in series {
            let color = *color;
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(1)))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Realized and commanded bend angle in degrees.
pub fn phi_chart(ticks: &[RobotTick], title: &str) -> Result<String> {
    let target = ticks.iter().map(|t| (t.t, t.target.phi().to_degrees())).collect();
    let actual = ticks.iter().map(|t| (t.t, t.bend.phi().to_degrees())).collect();
    line_chart(title, "phi [deg]", &[("target", RGBColor(150, 150, 150), target), ("actuated", BLUE, actual)])
}

/// Cable speeds in mm/s.
pub fn cable_velocity_chart(ticks: &[RobotTick], title: &str) -> Result<String> {
    let colors = [RED, GREEN, BLUE];
    let names = ["cable 1", "cable 2", "cable 3"];
    let series: Vec<Series<'_>> = (0..3)
        .map(|i| (names[i], colors[i], ticks.iter().map(|t| (t.t, t.cables.velocity[i] * 1e3)).collect()))
        .collect();
    line_chart(title, "velocity [mm/s]", &series)
}

/// The report's text table rendered as SVG.
pub fn report_table_svg(report: &Report) -> Result<String> {
    let text = report.to_text();
    let lines: Vec<&str> = text.lines().collect();
    let width = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0) as u32 * 9 + 40;
    let height = lines.len() as u32 * 20 + 40;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (width, height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let style = TextStyle::from(("monospace", 15).into_font()).color(&BLACK);
        for (i, line) in lines.iter().enumerate() {
            root.draw(&Text::new(line.to_string(), (20, 20 + i as i32 * 20), style.clone())).map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
