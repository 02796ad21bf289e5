//! Standalone SVG plots of result CSVs: points with error bars, optional
//! reference slope and horizontal guide.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Csv { path: PathBuf, reason: String },
    #[error("schema mismatch: column `{column}` not in {available:?}")]
    Schema { column: String, available: Vec<String> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// `tau^T` against the orbit norm, with the `-(d-2)` slope and the
    /// `V^{-2/3}` level.
    Plateau,
    /// One-arm probability against the radius, with slope `-2`.
    OneArm,
    TwoPoint,
    Pioneers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub err: Option<String>,
    /// One series per distinct value of this column.
    pub group: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub ref_slope: Option<f64>,
    pub hline: Option<f64>,
    pub title: String,
}

impl PlotSpec {
    pub fn log_log(x: &str, y: &str) -> Self {
        PlotSpec {
            x: x.into(),
            y: y.into(),
            err: Some("std_error".into()),
            group: Some("p".into()),
            log_x: true,
            log_y: true,
            ref_slope: None,
            hline: None,
            title: String::new(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Plateau => PlotSpec { title: "torus two-point function".into(), ..Self::log_log("linf", "value") },
            Preset::OneArm => {
                PlotSpec { ref_slope: Some(-2.0), title: "one-arm probability".into(), ..Self::log_log("radius", "value") }
            }
            Preset::TwoPoint => PlotSpec { title: "two-point function".into(), ..Self::log_log("linf", "value") },
            Preset::Pioneers => PlotSpec { title: "pioneer profile".into(), ..Self::log_log("n", "value") },
        }
    }
}

pub struct Plot {
    pub svg: String,
    pub warnings: Vec<String>,
}

struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>,
}

struct Data {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Option<Data>, PlotError> {
    let bytes = std::fs::read(path).map_err(|source| PlotError::Io { path: path.into(), source })?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let bad = |e: csv::Error| PlotError::Csv { path: path.into(), reason: e.to_string() };
    let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(bad)?;
    Ok(Some(Data { header, rows }))
}

fn col(d: &Data, name: &str) -> Result<usize, PlotError> {
    d.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PlotError::Schema { column: name.into(), available: d.header.clone() })
}

/// Render `csv` under `spec`. With `preset == Some(Plateau)` the guides are
/// derived from the `d` and `r` columns.
pub fn emit_plot(csv: &Path, spec: &PlotSpec, preset: Option<Preset>) -> Result<Plot, PlotError> {
    let mut warnings = Vec::new();
    let mut spec = spec.clone();
    let data = read_csv(csv)?;
    let mut series: BTreeMap<String, Series> = BTreeMap::new();
    match &data {
        Some(d) => {
            let (xi, yi) = (col(d, &spec.x)?, col(d, &spec.y)?);
            let ei = spec.err.as_deref().map(|e| col(d, e)).transpose()?;
            let gi = match spec.group.as_deref() {
                Some(g) if preset.is_some() => d.header.iter().position(|h| h == g),
                Some(g) => Some(col(d, g)?),
                None => None,
            };
            if preset == Some(Preset::Plateau) {
                let (di, ri) = (col(d, "d")?, col(d, "r")?);
                if let Some(row) = d.rows.first() {
                    let dim: f64 = num(&row[di]).unwrap_or(f64::NAN);
                    let r: f64 = num(&row[ri]).unwrap_or(f64::NAN);
                    spec.ref_slope = spec.ref_slope.or(Some(2.0 - dim));
                    spec.hline = spec.hline.or(Some(r.powf(dim).powf(-2.0 / 3.0)));
                }
            }
            let mut dropped = 0;
            for row in &d.rows {
                let (x, y) = (num(&row[xi]), num(&row[yi]));
                let e = ei.and_then(|i| num(&row[i])).unwrap_or(0.0);
                let ok = matches!((x, y), (Some(x), Some(y))
                    if (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0));
                if !ok {
                    dropped += 1;
                    continue;
                }
                let label = gi.map(|g| format!("{} = {}", spec.group.as_deref().unwrap(), short(&row[g]))).unwrap_or_default();
                series
                    .entry(label.clone())
                    .or_insert_with(|| Series { label, points: Vec::new() })
                    .points
                    .push((x.unwrap(), y.unwrap(), e.abs()));
            }
            if d.rows.is_empty() {
                warnings.push(format!("{}: no data rows; drawing empty axes", csv.display()));
            }
            if dropped > 0 {
                warnings.push(format!("dropped {dropped} rows with missing or nonpositive values"));
            }
        }
        None => warnings.push(format!("{}: empty file; drawing empty axes", csv.display())),
    }
    let series: Vec<Series> = series.into_values().collect();
    Ok(Plot { svg: render(&spec, &series), warnings })
}

fn num(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn short(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) => format!("{v:.6}").trim_end_matches('0').trim_end_matches('.').to_string(),
        Err(_) => s.to_string(),
    }
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    px0: f64,
    px1: f64,
}

impl Axis {
    fn new(log: bool, values: impl Iterator<Item = f64>, px0: f64, px1: f64) -> Self {
        let t = |v: f64| if log { v.log10() } else { v };
        let (mut lo, mut hi) = values.map(t).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis { log, lo: lo - pad, hi: hi + pad, px0, px1 }
    }

    fn map(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        self.px0 + (t - self.lo) / (self.hi - self.lo) * (self.px1 - self.px0)
    }

    /// Tick positions in data units with labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let step = ((b - a) / 8 + 1).max(1);
            (a..=b).step_by(step as usize).map(|k| (10f64.powi(k), format!("1e{k}"))).collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let mut v = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while v <= self.hi + 1e-9 * step {
                out.push((v, format!("{}", (v / step).round() * step)));
                v += step;
            }
            out
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(spec: &PlotSpec, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let xs = pts().map(|p| p.0);
    let ys = pts().flat_map(|&(_, y, e)| [y, y + e, if spec.log_y && y - e <= 0.0 { y } else { y - e }]);
    let ys: Vec<f64> = ys.chain(spec.hline.filter(|h| !spec.log_y || *h > 0.0)).collect();
    let ax = Axis::new(spec.log_x, xs, LEFT, W - RIGHT);
    let ay = Axis::new(spec.log_y, ys.into_iter(), H - BOTTOM, TOP);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    )
    .unwrap();
    for (v, label) in ax.ticks() {
        let x = ax.map(v);
        writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 5.0).unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, esc(&label)).unwrap();
    }
    for (v, label) in ay.ticks() {
        let y = ay.map(v);
        writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, esc(&label)).unwrap();
    }
    let scale = |log: bool, name: &str| if log { format!("{name} (log)") } else { name.to_string() };
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0, esc(&scale(spec.log_x, &spec.x)))
        .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        esc(&scale(spec.log_y, &spec.y))
    )
    .unwrap();
    if !spec.title.is_empty() {
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&spec.title)).unwrap();
    }
    writeln!(s, r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></clipPath>"#, W - LEFT - RIGHT, H - TOP - BOTTOM)
        .unwrap();
    s.push_str("<g clip-path=\"url(#plot)\">\n");
    if let Some(h) = spec.hline.filter(|h| !spec.log_y || *h > 0.0) {
        let y = ay.map(h);
        writeln!(s, r#"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="6 4"/>"#, W - RIGHT).unwrap();
    }
    if let (Some(k), Some(&(x0, y0, _))) = (spec.ref_slope, series.first().and_then(|s| s.points.first())) {
        // a power law through the first point, across the x range
        let (xa, xb) = if spec.log_x { (10f64.powf(ax.lo), 10f64.powf(ax.hi)) } else { (ax.lo, ax.hi) };
        let f = |x: f64| if spec.log_x && spec.log_y { y0 * (x / x0).powf(k) } else { y0 + k * (x - x0) };
        let (ya, yb) = (f(xa), f(xb));
        if ya.is_finite() && yb.is_finite() && (!spec.log_y || (ya > 0.0 && yb > 0.0)) {
            writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="2 3"/>"#,
                ax.map(xa),
                ay.map(ya),
                ax.map(xb),
                ay.map(yb)
            )
            .unwrap();
        }
    }
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for &(x, y, e) in &ser.points {
            let (px, py) = (ax.map(x), ay.map(y));
            if e > 0.0 {
                let lo = if spec.log_y && y - e <= 0.0 { H - BOTTOM } else { ay.map(y - e) };
                let hi = ay.map(y + e);
                writeln!(s, r#"<line x1="{px:.2}" y1="{lo:.2}" x2="{px:.2}" y2="{hi:.2}" stroke="{c}"/>"#).unwrap();
            }
            writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{c}"/>"#).unwrap();
        }
    }
    s.push_str("</g>\n");
    let mut ly = TOP + 16.0;
    for (i, ser) in series.iter().enumerate().filter(|(_, s)| !s.label.is_empty()) {
        let c = COLORS[i % COLORS.len()];
        writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="{c}"/>"#, W - RIGHT - 120.0, ly - 4.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - RIGHT - 110.0, esc(&ser.label)).unwrap();
        ly += 16.0;
    }
    if let Some(k) = spec.ref_slope {
        writeln!(s, r#"<text x="{}" y="{ly}" fill="gray">slope {}</text>"#, W - RIGHT - 120.0, short(&k.to_string())).unwrap();
        ly += 16.0;
    }
    if let Some(h) = spec.hline {
        writeln!(s, r#"<text x="{}" y="{ly}" fill="gray">level {h:.3e}</text>"#, W - RIGHT - 120.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
