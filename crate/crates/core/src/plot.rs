//! Deterministic SVG line plots and heatmaps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesStyle {
    Line,
    Markers,
    LineMarkers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: SeriesStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub y_scale: AxisScale,
    pub series: Vec<Series>,
    pub width: u32,
    pub height: u32,
    /// Embedded as a comment so the file can be traced to its run.
    pub run_id: Option<String>,
}

impl PlotSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_scale: AxisScale, y_scale: AxisScale) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_scale,
            y_scale,
            series: Vec::new(),
            width: 640,
            height: 440,
            run_id: None,
        }
    }

    pub fn with_series(mut self, label: &str, points: Vec<(f64, f64)>, style: SeriesStyle) -> Self {
        self.series.push(Series { label: label.into(), points, style });
        self
    }
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps data values on one axis to pixels.
#[derive(Debug, Clone, Copy)]
struct Axis {
    scale: AxisScale,
    lo: f64,
    hi: f64,
    pixel_lo: f64,
    pixel_hi: f64,
}

impl Axis {
    fn transform(&self, v: f64) -> f64 {
        match self.scale {
            AxisScale::Linear => v,
            AxisScale::Log => v.log10(),
        }
    }

    fn pixel(&self, v: f64) -> f64 {
        let t = (self.transform(v) - self.lo) / (self.hi - self.lo);
        self.pixel_lo + t * (self.pixel_hi - self.pixel_lo)
    }

    /// Tick values: decades on log axes, 1-2-5 steps on linear axes.
    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            AxisScale::Log => (self.lo.ceil() as i32..=self.hi.floor() as i32).map(|e| 10f64.powi(e)).collect(),
            AxisScale::Linear => {
                let raw = (self.hi - self.lo) / 5.0;
                let magnitude = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * magnitude)
                    .find(|s| *s >= raw)
                    .unwrap_or(10.0 * magnitude);
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step).floor() as i64;
                (first..=last).map(|i| i as f64 * step).collect()
            }
        }
    }

    fn label(&self, v: f64) -> String {
        match self.scale {
            AxisScale::Log => format!("1e{}", v.log10().round() as i32),
            AxisScale::Linear => {
                let s = format!("{v:.6}");
                let s = s.trim_end_matches('0').trim_end_matches('.');
                if s == "-0" { "0".into() } else { s.into() }
            }
        }
    }
}

fn data_range(values: impl Iterator<Item = f64>, scale: AxisScale) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        let t = match scale {
            AxisScale::Linear => v,
            AxisScale::Log => v.log10(),
        };
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    match scale {
        // Whole decades so the ends carry ticks.
        AxisScale::Log => {
            let (lo, hi) = (lo.floor(), hi.ceil());
            if hi > lo { (lo, hi) } else { (lo, lo + 1.0) }
        }
        AxisScale::Linear => {
            if hi > lo {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        }
    }
}

fn validate(spec: &PlotSpec) -> Result<()> {
    for s in &spec.series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite("plot coordinate"));
            }
            if spec.x_scale == AxisScale::Log && x <= 0.0 {
                return Err(Error::Domain(format!("series `{}`: x = {x} on a log axis", s.label)));
            }
            if spec.y_scale == AxisScale::Log && y <= 0.0 {
                return Err(Error::Domain(format!("series `{}`: y = {y} on a log axis", s.label)));
            }
        }
    }
    Ok(())
}

/// Standalone SVG with axes, ticks and legend. Identical specs give
/// identical bytes.
pub fn emit_svg(spec: &PlotSpec) -> Result<String> {
    validate(spec)?;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let all = || spec.series.iter().flat_map(|s| s.points.iter());
    let (xlo, xhi) = data_range(all().map(|p| p.0), spec.x_scale);
    let (ylo, yhi) = data_range(all().map(|p| p.1), spec.y_scale);
    let x_axis = Axis { scale: spec.x_scale, lo: xlo, hi: xhi, pixel_lo: MARGIN_LEFT, pixel_hi: w - MARGIN_RIGHT };
    let y_axis = Axis { scale: spec.y_scale, lo: ylo, hi: yhi, pixel_lo: h - MARGIN_BOTTOM, pixel_hi: MARGIN_TOP };

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    if let Some(id) = &spec.run_id {
        let _ = writeln!(out, "<!-- run_id: {} -->", escape(id));
    }
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&spec.title));
    let (px0, px1, py0, py1) = (x_axis.pixel_lo, x_axis.pixel_hi, y_axis.pixel_lo, y_axis.pixel_hi);
    let _ = writeln!(out, r#"<rect class="frame" x="{px0:.2}" y="{py1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, px1 - px0, py0 - py1);

    for t in x_axis.ticks() {
        let x = x_axis.pixel(t);
        let _ = writeln!(
            out,
            r#"<line class="xtick" data-value="{}" x1="{x:.2}" y1="{py0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            crate::io::format_f64(t),
            py0 + 5.0
        );
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, py0 + 18.0, x_axis.label(t));
    }
    for t in y_axis.ticks() {
        let y = y_axis.pixel(t);
        let _ = writeln!(
            out,
            r#"<line class="ytick" data-value="{}" x1="{:.2}" y1="{y:.2}" x2="{px0:.2}" y2="{y:.2}" stroke="black"/>"#,
            crate::io::format_f64(t),
            px0 - 5.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, px0 - 8.0, y + 4.0, y_axis.label(t));
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (px0 + px1) / 2.0, h - 15.0, escape(&spec.x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0,
        escape(&spec.y_label)
    );

    for (i, s) in spec.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", x_axis.pixel(x), y_axis.pixel(y)))
            .collect();
        if matches!(s.style, SeriesStyle::Line | SeriesStyle::LineMarkers) && coords.len() > 1 {
            let _ = writeln!(out, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        if matches!(s.style, SeriesStyle::Markers | SeriesStyle::LineMarkers) {
            for c in &coords {
                let (cx, cy) = c.split_once(',').expect("formatted pair");
                let _ = writeln!(out, r#"<circle class="marker" cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
            }
        }
        let ly = MARGIN_TOP + 10.0 + 16.0 * i as f64;
        let lx = w - MARGIN_RIGHT + 10.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(out, r#"<text class="legend" x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Heatmap of a square matrix with rows and columns reordered by `order`.
/// Matrices larger than `max_cells` are block-averaged down to at most
/// `max_cells × max_cells`. Values are mapped linearly from `[lo, hi]` to
/// white..dark blue.
pub fn emit_heatmap_svg(values: &[f64], m: usize, order: &[usize], max_cells: usize, title: &str, run_id: Option<&str>) -> Result<String> {
    if values.len() != m * m {
        return Err(Error::Shape { expected: m * m, got: values.len() });
    }
    if order.len() != m {
        return Err(Error::LengthMismatch { left: order.len(), right: m });
    }
    let cells = m.min(max_cells.max(1));
    let mut grid = vec![0.0; cells * cells];
    let mut counts = vec![0usize; cells * cells];
    for (a, &i) in order.iter().enumerate() {
        let ca = a * cells / m.max(1);
        for (b, &j) in order.iter().enumerate() {
            let cb = b * cells / m.max(1);
            grid[ca * cells + cb] += values[i * m + j];
            counts[ca * cells + cb] += 1;
        }
    }
    for (g, &c) in grid.iter_mut().zip(&counts) {
        if c > 0 {
            *g /= c as f64;
        }
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let size = 480.0;
    let cell = size / cells as f64;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="560" height="540" viewBox="0 0 560 540" font-family="sans-serif" font-size="11">"#
    );
    if let Some(id) = run_id {
        let _ = writeln!(out, "<!-- run_id: {} -->", escape(id));
    }
    let _ = writeln!(out, r#"<rect width="560" height="540" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="280" y="22" text-anchor="middle" font-size="14">{}</text>"#, escape(title));
    for r in 0..cells {
        for c in 0..cells {
            let t = (grid[r * cells + c] - lo) / span;
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let _ = writeln!(
                out,
                r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#{:02x}{:02x}{:02x}"/>"##,
                40.0 + c as f64 * cell,
                40.0 + r as f64 * cell,
                cell,
                cell,
                shade(8.0),
                shade(48.0),
                shade(107.0)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="280" y="535" text-anchor="middle">color range {} to {}</text>"#,
        crate::io::format_f64(lo),
        crate::io::format_f64(hi)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn empty_series_gives_axes_only() {
        let svg = emit_svg(&PlotSpec::new("t", "x", "y", AxisScale::Linear, AxisScale::Linear)).unwrap();
        assert!(svg.contains("class=\"frame\""));
        assert!(!svg.contains("polyline"));
    }

    #[test]
    fn identical_specs_identical_bytes() {
        let spec = PlotSpec::new("t", "x", "y", AxisScale::Log, AxisScale::Log).with_series(
            "a",
            vec![(1.0, 2.0), (10.0, 3.0)],
            SeriesStyle::LineMarkers,
        );
        assert_eq!(emit_svg(&spec).unwrap(), emit_svg(&spec).unwrap());
    }

    #[test]
    fn log_axis_rejects_nonpositive() {
        let spec = PlotSpec::new("t", "x", "y", AxisScale::Log, AxisScale::Linear).with_series("a", vec![(0.0, 1.0)], SeriesStyle::Line);
        assert!(emit_svg(&spec).is_err());
    }

    #[test]
    fn power_law_is_straight_in_tick_coordinates() {
        let points: Vec<(f64, f64)> = (0..20).map(|i| 10f64.powf(1.0 + i as f64 * 0.15)).map(|x| (x, 5.0 * x.powf(-0.7))).collect();
        let spec = PlotSpec::new("t", "x", "y", AxisScale::Log, AxisScale::Log).with_series("a", points.clone(), SeriesStyle::Line);
        let svg = emit_svg(&spec).unwrap();
        // Recover the pixel-per-decade mapping from the tick marks.
        let ticks = |class: &str, coord: &str| -> Vec<(f64, f64)> {
            svg.lines()
                .filter(|l| l.contains(&format!("class=\"{class}\"")))
                .map(|l| (attr(l, "data-value").log10(), attr(l, coord)))
                .collect()
        };
        let xt = ticks("xtick", "x1");
        let yt = ticks("ytick", "y1");
        let map = |t: &[(f64, f64)], pixel: f64| {
            let (a, b) = (t[0], t[t.len() - 1]);
            a.0 + (pixel - a.1) * (b.0 - a.0) / (b.1 - a.1)
        };
        let line = svg.lines().find(|l| l.contains("<polyline")).unwrap();
        let start = line.find("points=\"").unwrap() + 8;
        let coords: Vec<(f64, f64)> = line[start..line.rfind('"').unwrap()]
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (map(&xt, x.parse().unwrap()), map(&yt, y.parse().unwrap()))
            })
            .collect();
        for ((lx, ly), (x, y)) in coords.iter().zip(&points) {
            assert!((lx - x.log10()).abs() < 0.01);
            assert!((ly - y.log10()).abs() < 0.01);
        }
        let slope = (coords[19].1 - coords[0].1) / (coords[19].0 - coords[0].0);
        assert!((slope + 0.7).abs() < 0.01);
    }

    #[test]
    fn heatmap_downsamples() {
        let m = 450;
        let values: Vec<f64> = (0..m * m).map(|i| (i % 7) as f64).collect();
        let order: Vec<usize> = (0..m).collect();
        let svg = emit_heatmap_svg(&values, m, &order, 200, "h", Some("abc")).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 200 * 200);
        assert!(svg.contains("run_id: abc"));
        assert!(emit_heatmap_svg(&values, m, &order[1..], 200, "h", None).is_err());
    }
}
