//! Renders the CSVs written by `simulate` as SVG charts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::text_anchor::{HPos, Pos, VPos};
use plver_core::model::BITRATE_LADDER_KBPS;
use plver_core::simulator::Strategy;
use serde::Deserialize;

use crate::svg::{check_svg, SvgInfo};
use crate::CliError;

const SIZE: (u32, u32) = (900, 540);
/// Alpha used for the single-alpha charts when none is requested.
const DEFAULT_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, Deserialize)]
pub struct MetricRow {
    pub window_start: u64,
    pub strategy: String,
    pub alpha: f64,
    pub fluctuation: f64,
    pub offloading_ratio: f64,
    pub sat_400: Option<f64>,
    pub sat_750: Option<f64>,
    pub sat_1000: Option<f64>,
    pub sat_2500: Option<f64>,
    pub edge_kb: u64,
    pub origin_kb: u64,
    pub degenerate: bool,
}

impl MetricRow {
    fn satisfaction(&self, tier: u32) -> Option<f64> {
        match tier {
            400 => self.sat_400,
            750 => self.sat_750,
            1000 => self.sat_1000,
            2500 => self.sat_2500,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Alpha for the time series, heatmap, tier and fluctuation charts. The
    /// nearest alpha present in the data is used; 0.6 when unset.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub path: PathBuf,
    /// Legend entries (or panels, for the heatmap) in drawing order.
    pub series: Vec<String>,
    pub info: SvgInfo,
}

fn chart_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("chart: {e}"))
}

fn color(s: Strategy) -> RGBColor {
    match s {
        Strategy::Plver => RGBColor(31, 119, 180),
        Strategy::Abr => RGBColor(255, 127, 14),
        Strategy::Cort => RGBColor(44, 160, 44),
    }
}

/// Rows of `dir/metrics.csv` whose strategy this build knows.
pub fn read_metrics(dir: &Path) -> Result<Vec<(Strategy, MetricRow)>, CliError> {
    let path = dir.join("metrics.csv");
    let mut reader =
        csv::Reader::from_path(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, r) in reader.deserialize::<MetricRow>().enumerate() {
        let row = r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        match row.strategy.parse::<Strategy>() {
            Ok(s) => rows.push((s, row)),
            Err(_) => log::warn!("{} row {}: unknown strategy {:?} skipped", path.display(), i + 2, row.strategy),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// `(strategy, alpha, fluctuation)` encoded in a per-cluster file name.
fn parse_cluster_file(name: &str) -> Option<(Strategy, f64, f64)> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let s = parts.next()?.parse().ok()?;
    let a = parts.next()?.strip_prefix('a')?.parse().ok()?;
    let f = parts.next()?.strip_prefix('f')?.parse().ok()?;
    parts.next().is_none().then_some((s, a, f))
}

fn read_cluster_file(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(err)?;
    reader.deserialize::<(String, f64)>().map(|r| r.map_err(err)).collect()
}

fn nearest(values: &[f64], target: f64) -> f64 {
    values.iter().copied().fold(values[0], |best, v| if (v - target).abs() < (best - target).abs() { v } else { best })
}

fn distinct(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn label_style(size: u32) -> TextStyle<'static> {
    TextStyle::from(("sans-serif", size).into_font()).color(&BLACK)
}

/// Grouped bars, one group per label and one bar per series, on a 0..1 axis.
fn bar_chart(
    caption: &str,
    x_desc: &str,
    y_desc: &str,
    labels: &[String],
    series: &[(Strategy, Vec<Option<f64>>)],
) -> Result<String, CliError> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(chart_err)?;
        let n = labels.len() as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption(caption, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(48)
            .y_label_area_size(56)
            .build_cartesian_2d(0f64..n, 0f64..1.05f64)
            .map_err(chart_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .x_desc(x_desc)
            .y_desc(y_desc)
            .draw()
            .map_err(chart_err)?;
        let width = 0.8 / series.len() as f64;
        for (k, (s, values)) in series.iter().enumerate() {
            let c = color(*s);
            let bars = values.iter().enumerate().filter_map(|(i, v)| {
                let x0 = i as f64 + 0.1 + k as f64 * width;
                v.map(|v| Rectangle::new([(x0, 0.0), (x0 + width * 0.9, v)], c.filled()))
            });
            chart
                .draw_series(bars)
                .map_err(chart_err)?
                .label(s.to_string())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], c.filled()));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .background_style(WHITE.mix(0.9))
            .border_style(BLACK)
            .draw()
            .map_err(chart_err)?;
        let (_, y_bottom) = chart.backend_coord(&(0.0, 0.0));
        let style = label_style(14).pos(Pos::new(HPos::Center, VPos::Top));
        for (i, l) in labels.iter().enumerate() {
            let (x, _) = chart.backend_coord(&(i as f64 + 0.5, 0.0));
            root.draw(&Text::new(l.clone(), (x, y_bottom + 6), style.clone())).map_err(chart_err)?;
        }
        root.present().map_err(chart_err)?;
    }
    Ok(buf)
}

/// One line with markers per series.
fn line_chart(
    caption: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(Strategy, Vec<(f64, f64)>)],
) -> Result<String, CliError> {
    let xs = || series.iter().flat_map(|(_, p)| p.iter().map(|&(x, _)| x));
    let lo = xs().fold(f64::INFINITY, f64::min);
    let mut hi = xs().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(chart_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(caption, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(48)
            .y_label_area_size(56)
            .build_cartesian_2d(lo..hi, 0f64..1.05f64)
            .map_err(chart_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(chart_err)?;
        for (s, points) in series {
            let c = color(*s);
            chart
                .draw_series(LineSeries::new(points.iter().copied(), c.stroke_width(2)))
                .map_err(chart_err)?
                .label(s.to_string())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], c.stroke_width(2)));
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, c.filled())))
                .map_err(chart_err)?;
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.9))
            .border_style(BLACK)
            .draw()
            .map_err(chart_err)?;
        root.present().map_err(chart_err)?;
    }
    Ok(buf)
}

fn shade(ratio: f64) -> RGBColor {
    // white at 0, dark blue at 1
    let t = ratio.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    RGBColor(mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0))
}

fn heatmap_panel(
    area: &DrawingArea<SVGBackend, Shift>,
    title: &str,
    cells: &[(String, f64)],
) -> Result<(), CliError> {
    let cols = (cells.len() as f64).sqrt().ceil().max(1.0) as i32;
    let rows = ((cells.len() as i32 + cols - 1) / cols).max(1);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .build_cartesian_2d(0..cols, 0..rows)
        .map_err(chart_err)?;
    chart
        .draw_series(cells.iter().enumerate().map(|(i, (_, r))| {
            let (x, y) = (i as i32 % cols, rows - 1 - i as i32 / cols);
            Rectangle::new([(x, y), (x + 1, y + 1)], shade(*r).filled())
        }))
        .map_err(chart_err)?;
    chart
        .draw_series(cells.iter().enumerate().map(|(i, _)| {
            let (x, y) = (i as i32 % cols, rows - 1 - i as i32 / cols);
            Rectangle::new([(x, y), (x + 1, y + 1)], WHITE.stroke_width(1))
        }))
        .map_err(chart_err)?;
    Ok(())
}

/// Per-cluster offloading, one panel per strategy; cells follow cluster id
/// order, row by row.
fn heatmap(caption: &str, panels: &[(Strategy, Vec<(String, f64)>)]) -> Result<String, CliError> {
    let mut buf = String::new();
    {
        let root = SVGBackend::with_string(&mut buf, (SIZE.0, SIZE.0 / 3 + 60)).into_drawing_area();
        root.fill(&WHITE).map_err(chart_err)?;
        let root = root.titled(caption, ("sans-serif", 22)).map_err(chart_err)?;
        let areas = root.split_evenly((1, panels.len()));
        for (area, (s, cells)) in areas.iter().zip(panels) {
            let mean = mean(cells.iter().map(|(_, r)| *r)).unwrap_or(0.0);
            heatmap_panel(area, &format!("{s} (mean {mean:.3})"), cells)?;
        }
        root.present().map_err(chart_err)?;
    }
    Ok(buf)
}

fn write_chart(out: &Path, name: &str, svg: String, series: Vec<String>) -> Result<Chart, CliError> {
    let info = check_svg(&svg).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
    let path = out.join(name);
    fs::write(&path, svg).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Chart { path, series, info })
}

/// Reads `dir/metrics.csv` and `dir/clusters/*.csv` and writes the charts to
/// `out`. Strategies absent from the data are left out of every chart.
pub fn report(dir: &Path, out: &Path, opts: &ReportOptions) -> Result<Vec<Chart>, CliError> {
    let rows = read_metrics(dir)?;
    let present: Vec<Strategy> =
        Strategy::ALL.into_iter().filter(|s| rows.iter().any(|(r, _)| r == s)).collect();
    for s in Strategy::ALL.into_iter().filter(|s| !present.contains(s)) {
        log::warn!("no rows for {s}; it is omitted from the charts");
    }
    let alphas = distinct(rows.iter().map(|(_, r)| r.alpha).collect());
    let flucts = distinct(rows.iter().map(|(_, r)| r.fluctuation).collect());
    let alpha = nearest(&alphas, opts.alpha.unwrap_or(DEFAULT_ALPHA));
    let base_f = flucts[0];
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let names: Vec<String> = present.iter().map(|s| s.to_string()).collect();
    let of = |s: Strategy, a: f64, f: f64| {
        rows.iter().filter(move |(r, m)| *r == s && m.alpha == a && m.fluctuation == f).map(|(_, m)| m)
    };
    let mut charts = Vec::new();

    let by_alpha: Vec<(Strategy, Vec<Option<f64>>)> = present
        .iter()
        .map(|&s| (s, alphas.iter().map(|&a| mean(of(s, a, base_f).map(|m| m.offloading_ratio))).collect()))
        .collect();
    let labels: Vec<String> = alphas.iter().map(|a| format!("{a:.2}")).collect();
    let svg = bar_chart("Mean offloading ratio by cache share", "alpha", "offloading ratio", &labels, &by_alpha)?;
    charts.push(write_chart(out, "offloading_by_alpha.svg", svg, names.clone())?);

    let over_time: Vec<(Strategy, Vec<(f64, f64)>)> = present
        .iter()
        .map(|&s| {
            let mut points: Vec<(f64, f64)> =
                of(s, alpha, base_f).map(|m| (m.window_start as f64 / 3600.0, m.offloading_ratio)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            (s, points)
        })
        .collect();
    let svg = line_chart(
        &format!("Offloading ratio per window, alpha {alpha:.2}"),
        "hours since trace start",
        "offloading ratio",
        &over_time,
    )?;
    charts.push(write_chart(out, "offloading_over_time.svg", svg, names.clone())?);

    let tiers: Vec<(Strategy, Vec<Option<f64>>)> = present
        .iter()
        .map(|&s| {
            let per_tier =
                BITRATE_LADDER_KBPS.iter().map(|&t| mean(of(s, alpha, base_f).filter_map(|m| m.satisfaction(t))));
            (s, per_tier.collect())
        })
        .collect();
    let labels: Vec<String> = BITRATE_LADDER_KBPS.iter().map(|t| format!("{t} Kbps")).collect();
    let svg = bar_chart(
        &format!("Edge-served share of viewers by bitrate, alpha {alpha:.2}"),
        "bitrate",
        "satisfaction",
        &labels,
        &tiers,
    )?;
    charts.push(write_chart(out, "satisfaction_by_tier.svg", svg, names.clone())?);

    if flucts.len() > 1 {
        let by_f: Vec<(Strategy, Vec<(f64, f64)>)> = present
            .iter()
            .map(|&s| (s, flucts.iter().filter_map(|&f| Some((f, mean(of(s, alpha, f).map(|m| m.offloading_ratio))?))).collect()))
            .collect();
        let svg = line_chart(
            &format!("Mean offloading ratio under fluctuation, alpha {alpha:.2}"),
            "fluctuation magnitude",
            "offloading ratio",
            &by_f,
        )?;
        charts.push(write_chart(out, "offloading_by_fluctuation.svg", svg, names.clone())?);
    }

    let mut files: BTreeMap<Strategy, PathBuf> = BTreeMap::new();
    let cluster_dir = dir.join("clusters");
    if let Ok(entries) = fs::read_dir(&cluster_dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            match parse_cluster_file(&name) {
                Some((s, a, f)) if (a - alpha).abs() < 5e-3 && (f - base_f).abs() < 5e-3 => {
                    files.insert(s, entry.path());
                }
                Some(_) => {}
                None => log::warn!("{}: not a per-cluster result file; skipped", entry.path().display()),
            }
        }
    }
    if files.is_empty() {
        log::warn!("no per-cluster results at alpha {alpha:.2} in {}; heatmap skipped", cluster_dir.display());
    } else {
        let panels: Vec<(Strategy, Vec<(String, f64)>)> =
            files.iter().map(|(s, p)| Ok((*s, read_cluster_file(p)?))).collect::<Result<_, CliError>>()?;
        let svg = heatmap(&format!("Per-cluster offloading ratio, alpha {alpha:.2}"), &panels)?;
        let series = panels.iter().map(|(s, _)| s.to_string()).collect();
        charts.push(write_chart(out, "cluster_heatmap.svg", svg, series)?);
    }
    Ok(charts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_file_names_round_trip() {
        let name = crate::commands::cluster_file_name(Strategy::Cort, 0.4, 0.25);
        assert_eq!(parse_cluster_file(&name), Some((Strategy::Cort, 0.4, 0.25)));
        assert_eq!(parse_cluster_file("notes.txt"), None);
        assert_eq!(parse_cluster_file("plver_a0.40_f0.00_x.csv"), None);
    }

    #[test]
    fn nearest_alpha() {
        assert_eq!(nearest(&[0.2, 0.4, 1.0], 0.6), 0.4);
        assert_eq!(nearest(&[0.8], 0.1), 0.8);
    }

    #[test]
    fn bar_chart_is_valid_svg() {
        let svg = bar_chart(
            "t",
            "x",
            "y",
            &["a".into(), "b".into()],
            &[(Strategy::Plver, vec![Some(0.5), None]), (Strategy::Abr, vec![Some(0.2), Some(1.0)])],
        )
        .unwrap();
        check_svg(&svg).unwrap();
    }
}
