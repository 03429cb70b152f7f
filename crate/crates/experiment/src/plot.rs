use crate::csv::{parse_csv, CsvTable};
use crate::{ExperimentError, Result};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    LossCurve,
    SweepCurve,
    DriftCurve,
    Heatmap,
}

impl std::str::FromStr for PlotKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss-curve" => Ok(PlotKind::LossCurve),
            "sweep-curve" => Ok(PlotKind::SweepCurve),
            "drift-curve" => Ok(PlotKind::DriftCurve),
            "heatmap" => Ok(PlotKind::Heatmap),
            other => Err(ExperimentError::Input(format!(
                "unknown plot kind {other:?} (expected loss-curve, sweep-curve, drift-curve or heatmap)"
            ))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 46.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

fn f(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

/// Extracts (series, x, y) triples from the supported table layouts:
/// either `series,<x>,<y>` or a two-column `<x>,<y>` single series.
fn extract_series(table: &CsvTable, kind: PlotKind) -> Result<(String, String, Vec<Series>)> {
    let parse_num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| ExperimentError::Input(format!("non-numeric value {s:?}")))
    };
    if table.header.first().map(String::as_str) == Some("series") && table.header.len() == 3 {
        let x_name = table.header[1].clone();
        let y_name = table.header[2].clone();
        let mut series: Vec<Series> = Vec::new();
        for row in &table.rows {
            let name = row[0].clone();
            let x = parse_num(&row[1])?;
            let y = parse_num(&row[2])?;
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((x, y)),
                None => series.push(Series {
                    name,
                    points: vec![(x, y)],
                }),
            }
        }
        Ok((x_name, y_name, series))
    } else if table.header.len() == 3 && kind == PlotKind::SweepCurve {
        // alpha,metric,value → one series per metric.
        let x_name = table.header[0].clone();
        let y_name = table.header[2].clone();
        let mut series: Vec<Series> = Vec::new();
        for row in &table.rows {
            let x = parse_num(&row[0])?;
            let name = row[1].clone();
            let y = parse_num(&row[2])?;
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((x, y)),
                None => series.push(Series {
                    name,
                    points: vec![(x, y)],
                }),
            }
        }
        Ok((x_name, y_name, series))
    } else if table.header.len() == 2 {
        let x_name = table.header[0].clone();
        let y_name = table.header[1].clone();
        let mut points = Vec::new();
        for row in &table.rows {
            points.push((parse_num(&row[0])?, parse_num(&row[1])?));
        }
        Ok((
            x_name,
            y_name.clone(),
            vec![Series {
                name: y_name,
                points,
            }],
        ))
    } else {
        Err(ExperimentError::Input(format!(
            "unsupported column layout {:?}",
            table.header
        )))
    }
}

fn curve_svg(table: &CsvTable, kind: PlotKind, title: &str) -> Result<String> {
    let (x_name, y_name, mut series) = extract_series(table, kind)?;
    for s in series.iter_mut() {
        s.points
            .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    }
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_min, mut x_max) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut y_min, mut y_max) = all
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = svg_open(title);
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        f(MARGIN_L),
        f(MARGIN_T + plot_h),
        f(MARGIN_L + plot_w),
        f(MARGIN_T + plot_h)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        f(MARGIN_L),
        f(MARGIN_T),
        f(MARGIN_L),
        f(MARGIN_T + plot_h)
    ));
    // Ticks and labels.
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_min + t * (x_max - x_min);
        let yv = y_min + t * (y_max - y_min);
        let x = px(xv);
        let y = py(yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
            f(x),
            f(MARGIN_T + plot_h),
            f(x),
            f(MARGIN_T + plot_h + 4.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            f(x),
            f(MARGIN_T + plot_h + 16.0),
            tick_label(xv)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
            f(MARGIN_L - 4.0),
            f(y),
            f(MARGIN_L),
            f(y)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            f(MARGIN_L - 7.0),
            f(y + 3.0),
            tick_label(yv)
        ));
    }
    // Axis names.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x_name}</text>\n",
        f(MARGIN_L + plot_w / 2.0),
        f(HEIGHT - 10.0)
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_name}</text>\n",
        f(MARGIN_T + plot_h / 2.0),
        f(MARGIN_T + plot_h / 2.0)
    ));
    // Series.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{},{}", f(px(x)), f(py(y))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    // Legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 8.0 + i as f64 * 14.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            f(MARGIN_L + plot_w - 110.0),
            f(y - 8.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>\n",
            f(MARGIN_L + plot_w - 96.0),
            f(y),
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn heatmap_svg(table: &CsvTable, title: &str) -> Result<String> {
    let (ri, ci, vi) = match (
        table.column("row"),
        table.column("col"),
        table.column("value"),
    ) {
        (Some(r), Some(c), Some(v)) => (r, c, v),
        _ => {
            return Err(ExperimentError::Input(
                "heatmap needs row,col,value columns".to_string(),
            ))
        }
    };
    let mut cells = Vec::new();
    let mut max_row = 0usize;
    let mut max_col = 0usize;
    let mut v_min = f64::MAX;
    let mut v_max = f64::MIN;
    for row in &table.rows {
        let r: usize = row[ri]
            .parse()
            .map_err(|_| ExperimentError::Input(format!("bad row index {:?}", row[ri])))?;
        let c: usize = row[ci]
            .parse()
            .map_err(|_| ExperimentError::Input(format!("bad col index {:?}", row[ci])))?;
        let v: f64 = row[vi]
            .parse()
            .map_err(|_| ExperimentError::Input(format!("bad value {:?}", row[vi])))?;
        max_row = max_row.max(r);
        max_col = max_col.max(c);
        v_min = v_min.min(v);
        v_max = v_max.max(v);
        cells.push((r, c, v));
    }
    let span = if v_max > v_min { v_max - v_min } else { 1.0 };
    let rows = max_row + 1;
    let cols = max_col + 1;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let cell_w = plot_w / cols as f64;
    let cell_h = plot_h / rows as f64;

    let mut svg = svg_open(title);
    for (r, c, v) in &cells {
        let t = (v - v_min) / span;
        let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
        let color = format!("#{:02x}{:02x}{:02x}", lerp(20.0, 253.0), lerp(42.0, 200.0), lerp(72.0, 48.0));
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" stroke=\"#222\" stroke-width=\"0.5\"/>\n",
            f(MARGIN_L + *c as f64 * cell_w),
            f(MARGIN_T + *r as f64 * cell_h),
            f(cell_w),
            f(cell_h)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\">min {} · max {}</text>\n",
        f(MARGIN_L),
        f(HEIGHT - 12.0),
        tick_label(v_min),
        tick_label(v_max)
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n<text x=\"{}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH as u32, HEIGHT as u32, WIDTH as u32, HEIGHT as u32,
        f(WIDTH / 2.0)
    )
}

/// Renders a CSV into a deterministic SVG string.
pub fn plot_string(csv_text: &str, kind: PlotKind, title: &str) -> Result<String> {
    let table = parse_csv(csv_text)?;
    match kind {
        PlotKind::Heatmap => heatmap_svg(&table, title),
        _ => curve_svg(&table, kind, title),
    }
}

/// Reads the CSV at `csv_path` and writes the SVG to `out_path`.
pub fn emit_plot(csv_path: &Path, kind: PlotKind, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| ExperimentError::io(csv_path.display().to_string(), e))?;
    let title = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let svg = plot_string(&text, kind, &title)?;
    std::fs::write(out_path, svg)
        .map_err(|e| ExperimentError::io(out_path.display().to_string(), e))
}
